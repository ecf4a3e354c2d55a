// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, with the tolerances
// pinned below. Exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "dcomp/harness/commands.hpp"
#include "gradcheck.hpp"
#include "pursuit_fixture.hpp"
#include "scenarios.hpp"
#include "test_support.hpp"

namespace {

using namespace dcomp;
using namespace dcomp::harness;
using filter::EstimatorMode;
namespace fx = dcomp::testing;

// ---------------------------------------------------------------- tolerances
constexpr int kOracleSteps = 1000;
constexpr double kOracleTol = 1e-9;
constexpr double kOracleSeconds = 1.0;
constexpr int kGradModels = 20;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradSeconds = 30.0;
constexpr int kMaxEpochs = 15;
constexpr double kConvergedNmse = 1e-3;
constexpr double kPlateauBand = 0.20;
constexpr double kZeroDelayTol = 1e-6;
constexpr double kTinyRho = 1e-12;
constexpr int kDelay = 6;
constexpr double kSeMultiple = 2.0;
constexpr double kNoisyFrac = 0.2;
constexpr int kPsdCycles = 100000;
constexpr double kPsdFloor = -1e-9;
constexpr int kBenchDepth = 6;
constexpr int kBenchStateDim = 32;
constexpr int kBenchHiddenDim = 64;
constexpr int kBenchCalls = 10000;
constexpr double kBenchMeanMs = 7.0;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0,
                double e = 0, double g = 0) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a, b, c, d, e, g);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Shared state: the shipped pursuit configuration with its trained model and
// the delayed sweep used by criteria 5, 6 and 9.
struct PursuitRun {
  std::filesystem::path dir;
  RunConfig cfg;
  gru::TransitionModel model;
  std::string results_path;
  std::vector<EpisodeRecord> records;
};

PursuitRun& pursuit() {
  static PursuitRun* run = [] {
    auto* r = new PursuitRun;
    r->dir = std::filesystem::temp_directory_path() /
             ("dcomp_acceptance_" + std::to_string(::getpid()));
    std::filesystem::create_directories(r->dir);
    r->cfg = load_config(DCOMP_SOURCE_DIR "/configs/pursuit.json");
    const auto ds = env::collect_trajectories(r->cfg.env, r->cfg.collect.episodes, r->cfg.policy);
    r->model = gru::train_transition_model(ds, r->cfg.train.spec).model;
    const std::string model_path = (r->dir / "model.json").string();
    gru::save_model(r->model, model_path);
    r->cfg.sweep.model = model_path;
    r->cfg.sweep.trace_out.clear();
    r->cfg.sweep.delays = {kDelay};
    r->cfg.sweep.loss_probs = {0.0};
    r->cfg.sweep.noise_fracs = {0.0, kNoisyFrac};
    r->cfg.sweep.modes = {EstimatorMode::GruKalman, EstimatorMode::NaiveKalman,
                          EstimatorMode::GruOnly, EstimatorMode::NoCompensation};
    r->results_path = (r->dir / "results.csv").string();
    r->records = run_sweep(r->cfg).records;
    save_results(r->records, r->cfg, r->results_path);
    return r;
  }();
  return *run;
}

SampleStats returns(double noise, EstimatorMode m) {
  return sample_stats(returns_of(pursuit().records, {kDelay, 0.0, noise, m}));
}

// ----------------------------------------------------------------- criteria

Verdict kalman_oracle() {
  double worst = 0.0, slowest = 0.0;
  for (int delay : {0, 4}) {
    const auto t0 = Clock::now();
    const auto d = fx::kalman_oracle_comparison(kOracleSteps, delay, 11 + delay);
    slowest = std::max(slowest, seconds_since(t0));
    worst = std::max({worst, d.mean, d.cov});
  }
  return {worst <= kOracleTol && slowest < kOracleSeconds,
          fmt("max |diff| %.2e (tol %.0e) over %g steps at delays 0 and 4, slowest run %.3f s",
              worst, kOracleTol, kOracleSteps, slowest)};
}

Verdict gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int s = 0; s < kGradModels; ++s)
    worst = std::max(worst, fx::gradient_check_random_model(static_cast<std::uint64_t>(s)).max_rel_error);
  const double secs = seconds_since(t0);
  return {worst <= kGradRelTol && secs < kGradSeconds,
          fmt("%g models, max relative error %.2e (tol %.0e), %.2f s", kGradModels, worst,
              kGradRelTol, secs)};
}

Verdict convergence() {
  gru::TrainSpec spec;
  spec.epochs = kMaxEpochs;
  spec.seed = 3;
  const auto di = gru::train_transition_model(fx::double_integrator_dataset(200, 100, 0.1, 42), spec);
  int first = -1;
  for (std::size_t e = 0; e < di.loss_curve.size(); ++e)
    if (di.loss_curve[e] < kConvergedNmse) {
      first = static_cast<int>(e) + 1;
      break;
    }

  const double a = 0.5, s = 0.3;
  const auto ar = fx::ar1_dataset(200, 100, a, s, 77);
  gru::TrainSpec ar_spec;
  ar_spec.epochs = kMaxEpochs;
  ar_spec.learning_rate = 3e-3;
  const auto res = gru::train_transition_model(ar, ar_spec);
  const auto n = gru::fit_normalizer(gru::split_dataset(ar, ar_spec.validation_fraction, ar_spec.seed).train);
  const double sigma2 = s * s / (n.scale[0] * n.scale[0]);
  const double plateau = res.loss_curve.back();
  const bool di_ok = first > 0 && di.loss_curve.back() < kConvergedNmse;
  const bool ar_ok = std::abs(plateau - sigma2) <= kPlateauBand * sigma2;
  return {di_ok && ar_ok,
          fmt("double integrator val nmse %.2e (< %.0e first at epoch %g of %g); noise plateau "
              "%.4f vs sigma^2 %.4f",
              di.loss_curve.back(), kConvergedNmse, first, kMaxEpochs, plateau, sigma2) +
              fmt(" (band +-%.0f%%)", 100 * kPlateauBand)};
}

Verdict regime_equivalences() {
  const auto& model = pursuit().model;
  const FilterSettings& fs = pursuit().cfg.filter;
  // (a) all packets of a step in one call vs one call per packet.
  ChannelSettings jitter;
  jitter.family = DelayFamily::Uniform;
  jitter.uniform_spread = 3;
  const auto trace = fx::pursuit_trace(model, jitter, kDelay, kNoisyFrac, 200, 1);
  const auto bs = fx::batch_vs_stream(trace, model, filter_config_for(fs, &model, true), 200);
  const bool a_ok = bs.mismatched_steps == 0 && bs.multi_packet_steps > 0;

  // (b) every packet lost: GruKalman and GruOnly drive identical episodes.
  long long b_diff = 0;
  for (int delay : {0, kDelay}) {
    EpisodeSetup s;
    s.env = pursuit().cfg.env;
    s.env.seed = episode_env_seed(s.env.seed, 7, 0);
    s.channel = pursuit().cfg.channel.build(delay, 1.0, episode_channel_seed(s.env.seed, 7, 0));
    s.model = &model;
    s.filter = filter_config_for(fs, &model, true);
    s.mode = EstimatorMode::GruKalman;
    const auto x = run_episode(s, true);
    s.mode = EstimatorMode::GruOnly;
    const auto y = run_episode(s, true);
    if (x.ret != y.ret || x.states.size() != y.states.size()) ++b_diff;
    for (std::size_t t = 0; t < std::min(x.states.size(), y.states.size()); ++t)
      for (std::size_t i = 0; i < x.states[t].size(); ++i)
        if (x.states[t][i] != y.states[t][i]) ++b_diff;
  }

  // (c) zero delay, vanishing measurement noise: belief equals the observation.
  const auto zero = fx::pursuit_trace(model, ChannelSettings{}, 0, kNoisyFrac, 200, 2);
  const double c_err = fx::zero_delay_tracking_error(zero, model, kTinyRho);
  return {a_ok && b_diff == 0 && c_err <= kZeroDelayTol,
          fmt("(a) batch vs stream: %g mismatched of %g steps (%g multi-packet); (b) total loss "
              "GruKalman vs GruOnly: %g differing state entries; (c) max |belief - obs| %.2e "
              "(tol %.0e)",
              static_cast<double>(bs.mismatched_steps), static_cast<double>(bs.steps),
              static_cast<double>(bs.multi_packet_steps), static_cast<double>(b_diff), c_err,
              kZeroDelayTol)};
}

Verdict pursuit_compensation() {
  const auto gk = returns(0.0, EstimatorMode::GruKalman);
  const auto nk = returns(0.0, EstimatorMode::NaiveKalman);
  const auto zc = returns(0.0, EstimatorMode::NoCompensation);
  const double se = pooled_se(gk, zc);
  const bool ok = gk.mean - zc.mean > kSeMultiple * se && gk.mean >= nk.mean;
  return {ok, fmt("delay %g, %g episodes/mode: GruKalman %.2f, NaiveKalman %.2f, NoCompensation "
                  "%.2f; margin %.2f",
                  kDelay, static_cast<double>(gk.n), gk.mean, nk.mean, zc.mean, gk.mean - zc.mean) +
                  fmt(" vs %.0f x pooled SE = %.2f", kSeMultiple, kSeMultiple * se)};
}

Verdict noise_robustness() {
  const auto gk_n = returns(kNoisyFrac, EstimatorMode::GruKalman);
  const auto go_n = returns(kNoisyFrac, EstimatorMode::GruOnly);
  const auto gk_0 = returns(0.0, EstimatorMode::GruKalman);
  const auto go_0 = returns(0.0, EstimatorMode::GruOnly);
  const double se0 = pooled_se(gk_0, go_0);
  const bool ok = gk_n.mean >= go_n.mean && std::abs(gk_0.mean - go_0.mean) <= se0;
  return {ok, fmt("noise %.1f: GruKalman %.2f vs GruOnly %.2f; noise 0: GruKalman %.2f vs "
                  "GruOnly %.2f, |diff| %.2f",
                  kNoisyFrac, gk_n.mean, go_n.mean, gk_0.mean, go_0.mean,
                  std::abs(gk_0.mean - go_0.mean)) +
                  fmt(" vs pooled SE %.2f", se0)};
}

Verdict psd_stress() {
  const double worst = fx::psd_stress(kPsdCycles, 2024);
  return {worst >= kPsdFloor,
          fmt("%g predict/update cycles, min eigenvalue %.3e (floor %.0e)", kPsdCycles, worst,
              kPsdFloor)};
}

Verdict latency() {
  const auto model = random_model(kBenchStateDim, kBenchHiddenDim, 1);
  const auto r = bench_process_step(model, kBenchDepth, kBenchCalls, 200, 0);
  const double mean_ms = r.mean_us / 1000.0;
  return {mean_ms < kBenchMeanMs,
          fmt("d=%g H=%g depth %g: mean %.3f ms, median %.3f ms, p99 %.3f ms", kBenchStateDim,
              kBenchHiddenDim, kBenchDepth, mean_ms, r.median_us / 1000.0, r.p99_us / 1000.0) +
              fmt(" (limit %.0f ms)", kBenchMeanMs)};
}

Verdict reproducibility() {
  PursuitRun& p = pursuit();
  const std::string again = (p.dir / "results_again.csv").string();
  save_results(run_sweep(p.cfg).records, p.cfg, again);
  const std::string a = read_file(p.results_path), b = read_file(again);
  return {!a.empty() && a == b,
          fmt("two sweeps of %g episodes: %g and %g bytes, ", static_cast<double>(p.records.size()),
              static_cast<double>(a.size()), static_cast<double>(b.size())) +
              (a == b ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "delayed filter matches textbook Kalman filter", kalman_oracle},
      {2, "training gradient matches finite differences", gradient_check},
      {3, "training converges and plateaus at the noise floor", convergence},
      {4, "regime equivalences", regime_equivalences},
      {5, "compensation beats delayed baseline in pursuit", pursuit_compensation},
      {6, "robust to observation noise", noise_robustness},
      {7, "covariance stays positive semidefinite", psd_stress},
      {8, "per-step latency", latency},
      {9, "sweep results are byte-identical across runs", reproducibility},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Verdict v;
    const auto t0 = Clock::now();
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::printf("[%s] criterion %d: %s -- %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", c.id, c.name,
                v.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  try {
    std::error_code ec;
    std::filesystem::remove_all(pursuit().dir, ec);
  } catch (const std::exception&) {
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
