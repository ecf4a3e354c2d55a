// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace dcomp {

using AgentId = int;

/// A timestamped state broadcast from one agent to another.
struct Packet {
  AgentId sender = 0;
  AgentId receiver = 0;
  Eigen::VectorXd payload;
  std::int64_t send_stamp = 0;
};

}  // namespace dcomp
