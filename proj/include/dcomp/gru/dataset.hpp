// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dcomp/errors.hpp"
#include "dcomp/gru/params.hpp"

namespace dcomp::gru {

inline constexpr const char* kConvergedTag = "converged-policy";

struct Sample {
  Vec state;
  bool terminal = false;
};

struct Episode {
  std::vector<Sample> samples;
  std::string tag = kConvergedTag;
};

// Which side of a train/holdout split a dataset came from. Lets
// compute_training_mse refuse to score a model on its own training data.
enum class DatasetRole { Unsplit, Train, Holdout };

struct TrajectoryDataset {
  int dim = 0;
  double dt = 0.0;
  std::vector<Episode> episodes;
  DatasetRole role = DatasetRole::Unsplit;

  std::size_t sample_count() const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += e.samples.size();
    return n;
  }

  std::size_t transition_count() const {
    std::size_t n = 0;
    for (const auto& e : episodes) {
      if (!e.samples.empty()) n += e.samples.size() - 1;
    }
    return n;
  }

  // Throws UsageError on a malformed dataset (wrong lengths, misplaced
  // terminal flags, non-finite states).
  void validate() const {
    if (dim <= 0) throw UsageError("dataset: dim must be positive");
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      const auto& s = episodes[e].samples;
      for (std::size_t t = 0; t < s.size(); ++t) {
        if (s[t].state.size() != dim) {
          throw UsageError("dataset: episode " + std::to_string(e) +
                           " sample " + std::to_string(t) +
                           " has wrong state length");
        }
        if (!s[t].state.allFinite()) {
          throw UsageError("dataset: episode " + std::to_string(e) +
                           " sample " + std::to_string(t) + " is not finite");
        }
        if (s[t].terminal && t + 1 != s.size()) {
          throw UsageError("dataset: episode " + std::to_string(e) +
                           " has a terminal flag before its last sample");
        }
      }
    }
  }
};

// Text format:
//
//   dcomp-dataset 1
//   dim <d> dt <dt>
//   episode <tag> <n>
//   <x_0> ... <x_{d-1}> <terminal 0|1>      (n rows)
//   ...
//
// Numbers are written with 17 significant digits so a round trip is exact.
inline void write_dataset(const TrajectoryDataset& ds, std::ostream& os) {
  char buf[64];
  os << "dcomp-dataset 1\n";
  std::snprintf(buf, sizeof buf, "%.17g", ds.dt);
  os << "dim " << ds.dim << " dt " << buf << "\n";
  for (const auto& ep : ds.episodes) {
    os << "episode " << ep.tag << " " << ep.samples.size() << "\n";
    for (const auto& s : ep.samples) {
      for (Eigen::Index k = 0; k < s.state.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", s.state[k]);
        os << buf << ' ';
      }
      os << (s.terminal ? 1 : 0) << "\n";
    }
  }
}

inline void save_dataset(const TrajectoryDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open dataset for writing: " + path);
  write_dataset(ds, os);
  if (!os) throw IoError("failed writing dataset: " + path);
}

inline TrajectoryDataset read_dataset(std::istream& is) {
  TrajectoryDataset ds;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) -> LoadError {
    return LoadError("dataset line " + std::to_string(lineno) + ": " + msg);
  };
  auto next = [&]() -> bool {
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.find_first_not_of(" \t\r") != std::string::npos)
        return true;
    }
    return false;
  };

  if (!next()) throw fail("empty file");
  {
    std::istringstream ss(line);
    std::string magic;
    int version = 0;
    ss >> magic >> version;
    if (magic != "dcomp-dataset") throw fail("missing 'dcomp-dataset' header");
    if (version != 1) {
      throw fail("unsupported dataset version " + std::to_string(version));
    }
  }
  if (!next()) throw fail("missing dim/dt line");
  {
    std::istringstream ss(line);
    std::string k1, k2;
    ss >> k1 >> ds.dim >> k2 >> ds.dt;
    if (!ss || k1 != "dim" || k2 != "dt" || ds.dim <= 0) {
      throw fail("expected 'dim <d> dt <dt>'");
    }
  }
  while (next()) {
    std::istringstream ss(line);
    std::string kw;
    Episode ep;
    long long n = -1;
    ss >> kw >> ep.tag >> n;
    if (!ss || kw != "episode" || n < 0) {
      throw fail("expected 'episode <tag> <count>'");
    }
    ep.samples.reserve(static_cast<std::size_t>(n));
    for (long long t = 0; t < n; ++t) {
      if (!next()) throw fail("truncated episode");
      std::istringstream row(line);
      Sample s;
      s.state.resize(ds.dim);
      for (int k = 0; k < ds.dim; ++k) {
        if (!(row >> s.state[k])) throw fail("expected " + std::to_string(ds.dim) + " state values");
      }
      int term = -1;
      if (!(row >> term) || (term != 0 && term != 1)) {
        throw fail("expected terminal flag 0 or 1");
      }
      std::string extra;
      if (row >> extra) throw fail("trailing data on sample row");
      s.terminal = term == 1;
      ep.samples.push_back(std::move(s));
    }
    ds.episodes.push_back(std::move(ep));
  }
  try {
    ds.validate();
  } catch (const UsageError& e) {
    throw LoadError(e.what());
  }
  return ds;
}

inline TrajectoryDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset: " + path);
  return read_dataset(is);
}

}  // namespace dcomp::gru
