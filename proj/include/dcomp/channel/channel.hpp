// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dcomp/errors.hpp"
#include "dcomp/packet.hpp"

namespace dcomp::channel {

enum class DelayKind { Constant, UniformInt, Geometric };

/// Per-packet delay distribution in whole control steps.
struct DelayModel {
  DelayKind kind = DelayKind::Constant;
  int tau = 0;        // Constant
  int lo = 0, hi = 0; // UniformInt, inclusive
  double mean = 1.0;  // Geometric on {0, 1, 2, ...}

  static DelayModel constant(int tau) { return {DelayKind::Constant, tau, 0, 0, 1.0}; }
  static DelayModel uniform(int lo, int hi) { return {DelayKind::UniformInt, 0, lo, hi, 1.0}; }
  static DelayModel geometric(double mean) { return {DelayKind::Geometric, 0, 0, 0, mean}; }

  void validate() const {
    switch (kind) {
      case DelayKind::Constant:
        if (tau < 0) throw ConfigError("delay: constant tau must be >= 0");
        break;
      case DelayKind::UniformInt:
        if (lo < 0 || hi < lo) throw ConfigError("delay: uniform bounds need 0 <= lo <= hi");
        break;
      case DelayKind::Geometric:
        if (!(mean > 0.0) || !std::isfinite(mean)) throw ConfigError("delay: geometric mean must be > 0");
        break;
    }
  }

  int sample(std::mt19937_64& rng) const {
    switch (kind) {
      case DelayKind::Constant: return tau;
      case DelayKind::UniformInt: return std::uniform_int_distribution<int>(lo, hi)(rng);
      case DelayKind::Geometric:
        // Failures before the first success with p = 1/(mean+1) has the requested mean.
        return std::geometric_distribution<int>(1.0 / (mean + 1.0))(rng);
    }
    return 0;
  }
};

enum class LossKind {
  Bernoulli,  // i.i.d. per packet with loss_prob
  Burst,      // two-state Markov chain per pair: loss_prob while good, always lost while bad
};

/// How a packet that would overtake an earlier one on the same pair is handled.
enum class OrderPolicy {
  Clamp,     // hold it until the earlier packet has arrived
  DropLate,  // discard it
};

/// A delay model that takes effect for packets sent at or after `from_stamp`.
struct ScheduleSegment {
  std::int64_t from_stamp = 0;
  DelayModel delay;
};

struct ChannelConfig {
  DelayModel delay;
  std::vector<ScheduleSegment> schedule;  // optional, sorted by from_stamp
  double loss_prob = 0.0;
  LossKind loss_kind = LossKind::Bernoulli;
  double burst_enter = 0.05;  // P(good -> bad) per send
  double burst_exit = 0.5;    // P(bad -> good) per send
  OrderPolicy order = OrderPolicy::Clamp;
  std::uint64_t seed = 0;

  void validate() const {
    delay.validate();
    std::int64_t prev = -1;
    for (const auto& s : schedule) {
      s.delay.validate();
      if (s.from_stamp <= prev) throw ConfigError("delay schedule: from_stamp must increase");
      prev = s.from_stamp;
    }
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must be in [0, 1]");
    };
    prob(loss_prob, "loss_prob");
    prob(burst_enter, "burst_enter");
    prob(burst_exit, "burst_exit");
  }

  const DelayModel& delay_at(std::int64_t send_stamp) const {
    const DelayModel* m = &delay;
    for (const auto& s : schedule) {
      if (s.from_stamp <= send_stamp) m = &s.delay;
    }
    return *m;
  }
};

struct ChannelStats {
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;       // lost plus dropped_late
  std::uint64_t dropped_late = 0;  // discarded by OrderPolicy::DropLate
  std::uint64_t clamped = 0;       // arrival pushed back to keep FIFO
  std::vector<std::uint64_t> sampled_delay_hist;   // delay drawn, per accepted packet
  std::vector<std::uint64_t> realized_delay_hist;  // arrival - send, per queued packet

  std::uint64_t in_flight() const { return sent - delivered - dropped; }

  static double hist_mean(const std::vector<std::uint64_t>& h) {
    double s = 0.0, n = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
      s += static_cast<double>(k) * static_cast<double>(h[k]);
      n += static_cast<double>(h[k]);
    }
    return n == 0.0 ? 0.0 : s / n;
  }
};

/// One send event, as exported for offline replay.
struct TraceRecord {
  AgentId sender = 0;
  AgentId receiver = 0;
  std::int64_t send_stamp = 0;
  std::int64_t arrival_stamp = -1;  // -1 when dropped
  bool dropped = false;
  Eigen::VectorXd payload;
  Eigen::VectorXd truth;  // sender's true state at send time (empty if unknown)
};

/**
 * Simulated network between agents. Each ordered (sender, receiver) pair has
 * its own queue and its own random stream seeded from (seed, sender,
 * receiver), so results do not depend on the order in which pairs are used.
 */
class DelayChannel {
 public:
  explicit DelayChannel(ChannelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  void set_tracing(bool on) { tracing_ = on; }

  void send(const Packet& pkt, const Eigen::VectorXd* truth = nullptr) {
    detail::require(pkt.send_stamp >= 0, "send: negative send_stamp");
    detail::require(pkt.payload.allFinite(), "send: payload is not finite");
    Pair& pair = pair_for(pkt.sender, pkt.receiver);
    if (pkt.send_stamp < pair.last_send) {
      throw ContractViolation("send: stamp " + std::to_string(pkt.send_stamp) +
                              " precedes previous send " + std::to_string(pair.last_send) +
                              " on pair " + std::to_string(pkt.sender) + "->" +
                              std::to_string(pkt.receiver));
    }
    pair.last_send = pkt.send_stamp;
    ++stats_.sent;

    TraceRecord rec;
    if (tracing_) {
      rec.sender = pkt.sender;
      rec.receiver = pkt.receiver;
      rec.send_stamp = pkt.send_stamp;
      rec.payload = pkt.payload;
      if (truth != nullptr) rec.truth = *truth;
    }

    // Both draws happen on every send so the stream does not depend on outcomes.
    const bool lost = draw_loss(pair);
    const int tau = cfg_.delay_at(pkt.send_stamp).sample(pair.rng);
    if (lost) {
      ++stats_.dropped;
      record(std::move(rec), -1);
      return;
    }
    bump(stats_.sampled_delay_hist, tau);
    std::int64_t arrival = pkt.send_stamp + tau;
    if (arrival < pair.last_arrival) {
      if (cfg_.order == OrderPolicy::DropLate) {
        ++stats_.dropped;
        ++stats_.dropped_late;
        record(std::move(rec), -1);
        return;
      }
      arrival = pair.last_arrival;
      ++stats_.clamped;
    }
    pair.last_arrival = arrival;
    bump(stats_.realized_delay_hist, static_cast<int>(arrival - pkt.send_stamp));
    pair.queue.emplace_back(arrival, pkt);
    record(std::move(rec), arrival);
  }

  /// Packets for `receiver` with arrival <= now, ordered by (sender, send_stamp).
  std::vector<Packet> deliver(AgentId receiver, std::int64_t now) {
    std::vector<Packet> out;
    for (auto& [key, pair] : pairs_) {
      if (key.second != receiver) continue;
      while (!pair.queue.empty() && pair.queue.front().first <= now) {
        out.push_back(std::move(pair.queue.front().second));
        pair.queue.pop_front();
        ++stats_.delivered;
      }
    }
    return out;
  }

  const ChannelStats& stats() const { return stats_; }
  const ChannelConfig& config() const { return cfg_; }
  const std::vector<TraceRecord>& trace() const { return trace_; }

 private:
  struct Pair {
    std::mt19937_64 rng;
    std::deque<std::pair<std::int64_t, Packet>> queue;
    std::int64_t last_send = 0;
    std::int64_t last_arrival = 0;
    bool bad = false;
  };

  Pair& pair_for(AgentId s, AgentId r) {
    auto it = pairs_.find({s, r});
    if (it == pairs_.end()) {
      std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                        static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(r)};
      Pair p;
      p.rng.seed(seq);
      it = pairs_.emplace(std::make_pair(s, r), std::move(p)).first;
    }
    return it->second;
  }

  bool draw_loss(Pair& pair) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (cfg_.loss_kind == LossKind::Burst) {
      const double flip = u(pair.rng);
      pair.bad = pair.bad ? flip >= cfg_.burst_exit : flip < cfg_.burst_enter;
      const double draw = u(pair.rng);
      return pair.bad || draw < cfg_.loss_prob;
    }
    return u(pair.rng) < cfg_.loss_prob;
  }

  static void bump(std::vector<std::uint64_t>& h, int k) {
    const auto i = static_cast<std::size_t>(k);
    if (h.size() <= i) h.resize(i + 1, 0);
    ++h[i];
  }

  void record(TraceRecord rec, std::int64_t arrival) {
    if (!tracing_) return;
    rec.arrival_stamp = arrival;
    rec.dropped = arrival < 0;
    trace_.push_back(std::move(rec));
  }

  ChannelConfig cfg_;
  std::map<std::pair<AgentId, AgentId>, Pair> pairs_;
  ChannelStats stats_;
  bool tracing_ = false;
  std::vector<TraceRecord> trace_;
};

// ------------------------------------------------------------------- traces
//
// Comma-separated text:
//   # dcomp-trace 1
//   sender,receiver,send_stamp,arrival_stamp,dropped,payload_0..payload_{d-1},truth_0..truth_{d-1}
//   <one row per send>
// arrival_stamp is -1 for dropped packets. Truth columns may be absent.

inline void write_trace(const std::vector<TraceRecord>& records, std::ostream& os) {
  const Eigen::Index d = records.empty() ? 0 : records.front().payload.size();
  const bool with_truth = !records.empty() && records.front().truth.size() == d && d > 0;
  os << "# dcomp-trace 1\nsender,receiver,send_stamp,arrival_stamp,dropped";
  for (Eigen::Index k = 0; k < d; ++k) os << ",payload_" << k;
  if (with_truth) {
    for (Eigen::Index k = 0; k < d; ++k) os << ",truth_" << k;
  }
  os << "\n";
  char buf[64];
  for (const auto& r : records) {
    detail::require(r.payload.size() == d, "write_trace: payload dimension changed");
    os << r.sender << ',' << r.receiver << ',' << r.send_stamp << ',' << r.arrival_stamp << ','
       << (r.dropped ? 1 : 0);
    for (Eigen::Index k = 0; k < d; ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", r.payload[k]);
      os << ',' << buf;
    }
    if (with_truth) {
      detail::require(r.truth.size() == d, "write_trace: missing truth on some rows");
      for (Eigen::Index k = 0; k < d; ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", r.truth[k]);
        os << ',' << buf;
      }
    }
    os << "\n";
  }
}

inline void save_trace(const std::vector<TraceRecord>& records, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open trace for writing: " + path);
  write_trace(records, os);
  if (!os) throw IoError("failed writing trace: " + path);
}

inline std::vector<TraceRecord> read_trace(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    return LoadError("trace line " + std::to_string(lineno) + ": " + msg);
  };
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };

  if (!std::getline(is, line)) throw LoadError("trace line 1: empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "# dcomp-trace 1") throw fail("expected '# dcomp-trace 1' header");
  if (!std::getline(is, line)) throw fail("missing column header");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  if (header.size() < 5 || header[0] != "sender" || header[4] != "dropped") {
    throw fail("expected 'sender,receiver,send_stamp,arrival_stamp,dropped,...' columns");
  }
  std::size_t d = 0, truth_d = 0;
  for (std::size_t i = 5; i < header.size(); ++i) {
    if (header[i].rfind("payload_", 0) == 0) ++d;
    else if (header[i].rfind("truth_", 0) == 0) ++truth_d;
    else throw fail("unknown column '" + header[i] + "'");
  }
  if (d == 0) throw fail("no payload columns");
  if (truth_d != 0 && truth_d != d) throw fail("truth columns do not match payload columns");

  auto to_int = [&](const std::string& s) -> long long {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &pos);
    } catch (const std::exception&) {
      throw fail("expected an integer, got '" + s + "'");
    }
    if (pos != s.size()) throw fail("expected an integer, got '" + s + "'");
    return v;
  };
  auto to_real = [&](const std::string& s) -> double {
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw fail("expected a number, got '" + s + "'");
    }
    if (pos != s.size() || !std::isfinite(v)) throw fail("expected a finite number, got '" + s + "'");
    return v;
  };

  std::vector<TraceRecord> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw fail("expected " + std::to_string(header.size()) + " columns, got " +
                 std::to_string(cells.size()));
    }
    TraceRecord r;
    r.sender = static_cast<AgentId>(to_int(cells[0]));
    r.receiver = static_cast<AgentId>(to_int(cells[1]));
    r.send_stamp = to_int(cells[2]);
    r.arrival_stamp = to_int(cells[3]);
    const long long dropped = to_int(cells[4]);
    if (dropped != 0 && dropped != 1) throw fail("dropped must be 0 or 1");
    r.dropped = dropped == 1;
    if (r.send_stamp < 0) throw fail("negative send_stamp");
    if (r.dropped != (r.arrival_stamp < 0)) throw fail("arrival_stamp must be -1 exactly when dropped");
    if (!r.dropped && r.arrival_stamp < r.send_stamp) throw fail("arrival before send");
    r.payload.resize(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) r.payload[static_cast<Eigen::Index>(k)] = to_real(cells[5 + k]);
    if (truth_d != 0) {
      r.truth.resize(static_cast<Eigen::Index>(d));
      for (std::size_t k = 0; k < d; ++k)
        r.truth[static_cast<Eigen::Index>(k)] = to_real(cells[5 + d + k]);
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<TraceRecord> load_trace(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open trace: " + path);
  return read_trace(is);
}

}  // namespace dcomp::channel
