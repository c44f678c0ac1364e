// Copyright 2026 The wcps Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// wcps: simulate bunched-light timestamp pairs, find and track the offset
// between two free-running clocks, and tabulate peak-finding statistics.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wcps/wcps.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace wcps;

namespace
{
enum Exit : int
{
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kParse = 3,
  kNotFound = 4,
  kTrackingLost = 5,
  kPeerLost = 6,
};

struct Common
{
  std::uint64_t seed = 1;
  std::string out;
  std::string format = "csv";
  std::optional<double> duration;
  std::string preset;
};

template <typename T>
T pick(const std::optional<T> & user, T fallback)
{
  return user ? *user : fallback;
}

// Output plumbing ------------------------------------------------------------

fs::path out_dir(const Common & c)
{
  fs::path d = c.out.empty() ? fs::path(".") : fs::path(c.out);
  fs::create_directories(d);
  return d;
}

std::ofstream open_out(const fs::path & p, std::ios::openmode mode = std::ios::out)
{
  std::ofstream os(p, mode);
  if (!os) {
    throw IoError("cannot open " + p.string() + " for writing");
  }
  return os;
}

void write_json_file(const fs::path & p, const json & j)
{
  auto os = open_out(p);
  os << j.dump(2) << '\n';
  if (!os) {
    throw IoError("failed writing " + p.string());
  }
}

/// Every command drops <command>.meta.json next to its outputs: resolved
/// config, seed, version and the argument list that `wcps rerun` replays.
void write_meta(
  const fs::path & dir, const std::string & command, const Common & c, const json & config,
  const std::vector<std::string> & args)
{
  json meta;
  meta["tool"] = "wcps";
  meta["version"] = kVersion;
  meta["command"] = command;
  meta["seed"] = c.seed;
  meta["config"] = config;
  std::vector<std::string> replay;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out") {
      ++i;
      continue;
    }
    if (args[i].rfind("--out=", 0) == 0) {
      continue;
    }
    replay.push_back(args[i]);
  }
  meta["args"] = replay;
  write_json_file(dir / (command + ".meta.json"), meta);
}

json read_json_file(const std::string & path)
{
  std::ifstream is(path);
  if (!is) {
    throw IoError("cannot open " + path);
  }
  try {
    return json::parse(is);
  } catch (const json::exception & e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
}

EventStream load_stream(const std::string & path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IoError("cannot open " + path);
  }
  try {
    return read_timetags(is);
  } catch (const ParseError & e) {
    throw ParseError(path + ": " + e.what(), e.offset());
  }
}

json candidate_json(const PeakCandidate & c)
{
  return {
    {"tau_ps", c.tau.count()},
    {"lag", c.lag},
    {"q", c.grid.q},
    {"delta_t_ps", c.grid.delta_t.count()},
    {"peak_counts", c.peak_counts},
    {"noise_mean", c.noise_mean},
    {"noise_sd", c.noise_sd},
    {"significance", c.significance},
    {"threshold", c.threshold},
    {"searched_bins", c.searched_bins},
    {"du", c.du},
    {"accepted", c.accepted},
  };
}

// Presets --------------------------------------------------------------------

// lab: the default pair source. surface / surface-normal: the attenuated
// link used for success-probability surfaces. tracking: 200 kcps at 10 ppb.
// uncorrelated: lab singles with no bunching.
const std::vector<std::string> kPresets{"lab", "surface", "surface-normal", "tracking", "uncorrelated"};

struct SimPreset
{
  double s1 = 192e3, s2 = 182e3, g2_peak = 1.42, tau_c_ns = 180;
  std::optional<double> coinc_rate;
  double du_ppb = 0;
};

SimPreset sim_preset(const std::string & name)
{
  SimPreset p;
  if (name == "surface" || name == "surface-normal") {
    p.s1 = p.s2 = 100e3;
    p.coinc_rate = 650.0;
    p.du_ppb = 50;
  } else if (name == "tracking") {
    p.s1 = p.s2 = 200e3;
    p.du_ppb = 10;
  } else if (name == "uncorrelated") {
    p.g2_peak = 1.0;
  }
  return p;
}

// simulate -------------------------------------------------------------------

struct SimulateArgs
{
  std::optional<double> s1, s2, g2_peak, coinc_rate, tau_c_ns, du_ppb;
  double dark_a = 0, dark_b = 0, jitter_ps = 0, dead_time_ns = 0;
  double loss_a_db = 0, loss_b_db = 0;
  double offset_ns = 0, drift_ppb_s = 0, rw_step_ppb = 0, rw_bound_ppb = 0;
  double truth_step_s = 0.1;
  double block_s = 1.0;
};

int cmd_simulate(const Common & c, const SimulateArgs & a, const std::vector<std::string> & args)
{
  const SimPreset pre = sim_preset(c.preset);
  SourceParams sp;
  sp.s1 = pick(a.s1, pre.s1);
  sp.s2 = pick(a.s2, pre.s2);
  sp.tau_c = seconds_to_ticks(pick(a.tau_c_ns, pre.tau_c_ns) * 1e-9);
  sp.g2_peak = pick(a.g2_peak, pre.g2_peak);
  const std::optional<double> coinc = a.coinc_rate ? a.coinc_rate : (a.g2_peak ? std::nullopt : pre.coinc_rate);
  if (coinc) {
    sp.g2_peak = 1.0 + *coinc / (sp.s1 * sp.s2 * sp.tau_c_s());
  }
  sp.dark1 = a.dark_a;
  sp.dark2 = a.dark_b;
  sp.jitter_sigma = TimeTick{std::llround(a.jitter_ps)};
  sp.dead_time = seconds_to_ticks(a.dead_time_ns * 1e-9);
  sp.duration_s = pick(c.duration, 60.0);
  sp.seed = c.seed;
  sp.validate();

  ClockModel cb;
  cb.offset = seconds_to_ticks(a.offset_ns * 1e-9);
  cb.du0 = ppb(pick(a.du_ppb, pre.du_ppb));
  cb.drift_rate = ppb(a.drift_ppb_s);
  cb.rw_step = ppb(a.rw_step_ppb);
  cb.rw_bound = ppb(a.rw_bound_ppb);
  cb.seed = derive_seed(c.seed, 100);
  const ClockTrace trace(cb, sp.duration_s + 1.0);

  if (!(a.loss_a_db >= 0.0 && a.loss_b_db >= 0.0)) {
    throw ParameterError("simulate: losses are given as positive dB");
  }
  if (!(a.block_s > 0.0) || !(a.truth_step_s > 0.0)) {
    throw ParameterError("simulate: block and truth step must be positive");
  }
  Attenuator att_a(-a.loss_a_db, derive_seed(c.seed, 200));
  Attenuator att_b(-a.loss_b_db, derive_seed(c.seed, 201));

  const fs::path dir = out_dir(c);
  auto fa = open_out(dir / "a.wcpt", std::ios::binary | std::ios::out | std::ios::trunc);
  auto fb = open_out(dir / "b.wcpt", std::ios::binary | std::ios::out | std::ios::trunc);
  TimetagWriter wa(fa, 1);
  TimetagWriter wb(fb, 2);
  PairSource src(sp);
  while (!src.done()) {
    auto [ea, eb] = src.next_block(src.emitted_until_s() + a.block_s);
    att_a.apply(ea.ticks);
    EventStream lb = apply_clock(eb, trace);
    att_b.apply(lb.ticks);
    wa.append(ea.ticks);
    wb.append(lb.ticks);
    spdlog::debug("simulate: {:.1f} s generated", src.emitted_until_s());
  }
  wa.close();
  wb.close();
  spdlog::info("simulate: wrote {} + {} events", wa.count(), wb.count());

  json config = {
    {"s1", sp.s1},
    {"s2", sp.s2},
    {"g2_peak", sp.g2_peak},
    {"tau_c_ps", sp.tau_c.count()},
    {"excess_rate", sp.excess_rate()},
    {"dark_a", sp.dark1},
    {"dark_b", sp.dark2},
    {"jitter_ps", sp.jitter_sigma.count()},
    {"dead_time_ps", sp.dead_time.count()},
    {"loss_a_db", a.loss_a_db},
    {"loss_b_db", a.loss_b_db},
    {"duration_s", sp.duration_s},
    {"preset", c.preset},
    {"clock_b",
     {{"offset_ps", cb.offset.count()},
      {"du0", cb.du0},
      {"drift_rate", cb.drift_rate},
      {"rw_step", cb.rw_step},
      {"rw_bound", cb.rw_bound},
      {"seed", cb.seed}}},
  };

  // Ground truth on channel a's time base, which is true time: a pair at
  // t has tau = t - local_b(t).
  json truth;
  truth["version"] = kVersion;
  truth["seed"] = c.seed;
  truth["config"] = config;
  truth["counts"] = {{"a", wa.count()}, {"b", wb.count()}};
  truth["rates"] = {
    {"a", sp.duration_s > 0 ? static_cast<double>(wa.count()) / sp.duration_s : 0.0},
    {"b", sp.duration_s > 0 ? static_cast<double>(wb.count()) / sp.duration_s : 0.0}};
  std::vector<double> ts;
  std::vector<std::int64_t> tau;
  std::vector<double> du;
  for (double t = 0.0; t <= sp.duration_s + 1e-9; t += a.truth_step_s) {
    const TimeTick tt = seconds_to_ticks(t);
    ts.push_back(t);
    tau.push_back((tt - trace.to_local(tt)).count());
    du.push_back(trace.du_at(t));
  }
  truth["samples"] = {{"t_s", ts}, {"tau_ps", tau}, {"du", du}};
  truth["walk"] = trace.walk();
  write_json_file(dir / "truth.json", truth);
  write_meta(dir, "simulate", c, config, args);
  return kOk;
}

/// Ground truth rebuilt from a simulate sidecar: the clock model is stored
/// with its seed, so the exact trace can be regenerated.
struct Truth
{
  ClockModel clock;
  double duration_s = 0;
  std::optional<ClockTrace> trace;

  static Truth load(const std::string & path)
  {
    const json j = read_json_file(path);
    Truth t;
    const auto & cb = j.at("config").at("clock_b");
    t.clock.offset = TimeTick{cb.at("offset_ps").get<std::int64_t>()};
    t.clock.du0 = cb.at("du0").get<double>();
    t.clock.drift_rate = cb.at("drift_rate").get<double>();
    t.clock.rw_step = cb.at("rw_step").get<double>();
    t.clock.rw_bound = cb.at("rw_bound").get<double>();
    t.clock.seed = cb.at("seed").get<std::uint64_t>();
    t.duration_s = j.at("config").at("duration_s").get<double>();
    t.trace.emplace(t.clock, t.duration_s + 1.0);
    return t;
  }

  TimeTick tau_at(TimeTick t) const { return t - trace->to_local(t); }
  double du_at(double t_s) const { return trace->du_at(t_s); }
  /// Mean du over [t0, t1].
  double mean_du(double t0, double t1) const
  {
    return static_cast<double>((trace->integral(t1) - trace->integral(t0)) / (t1 - t0));
  }
};

// g2 ---------------------------------------------------------------------------

struct G2Args
{
  std::string file_a, file_b;
  int q = 7;
  double bin_ns = 16;
  std::string init;
  double tau_ns = 0, du_ppb = 0, t_ref_ns = 0;
};

struct Alignment
{
  TimeTick tau{0};
  double du = 0;
  std::optional<TimeTick> t_ref;
};

Alignment load_alignment(const std::string & init, double tau_ns, double du_ppb, std::optional<double> t_ref_ns)
{
  Alignment al;
  if (!init.empty()) {
    const json j = read_json_file(init);
    al.tau = TimeTick{j.at("tau_ps").get<std::int64_t>()};
    al.du = j.at("du").get<double>();
    al.t_ref = TimeTick{j.at("t_ref_ps").get<std::int64_t>()};
    return al;
  }
  al.tau = seconds_to_ticks(tau_ns * 1e-9);
  al.du = ppb(du_ppb);
  if (t_ref_ns) {
    al.t_ref = seconds_to_ticks(*t_ref_ns * 1e-9);
  }
  return al;
}

int cmd_g2(const Common & c, const G2Args & g, const std::vector<std::string> & args)
{
  const EventStream a = load_stream(g.file_a);
  EventStream b = load_stream(g.file_b);
  const Alignment al = load_alignment(g.init, g.tau_ns, g.du_ppb, g.t_ref_ns);
  if (al.tau.count() != 0 || al.du != 0.0) {
    b = align_to_a(b, al.tau, al.du, al.t_ref.value_or(a.empty() ? TimeTick{0} : a.front()));
  }
  const GridParams grid = centered_lag_grid(g.q, seconds_to_ticks(g.bin_ns * 1e-9));
  const double span_s = a.empty() || b.empty()
                          ? 0.0
                          : to_seconds(std::max(a.back(), b.back()) - std::min(a.front(), b.front()));
  if (!(span_s > 0.0)) {
    throw DataError("g2: streams are empty");
  }
  const double s1 = static_cast<double>(a.size()) / span_s;
  const double s2 = static_cast<double>(b.size()) / span_s;
  auto hist = g2_normalize(pair_histogram(a, b, grid), s1, s2, span_s);
  const fs::path dir = out_dir(c);
  {
    auto os = open_out(dir / (c.format == "json" ? "g2.json" : "g2.csv"));
    if (c.format == "json") {
      json rows = json::array();
      for (std::size_t k = 0; k < hist.size(); ++k) {
        rows.push_back({{"lag_ps", hist.lag_center(k).count()},
                        {"counts", hist.counts[k]},
                        {"g2", hist.normalized[k]},
                        {"g2_err", hist.errors[k]}});
      }
      os << rows.dump(2) << '\n';
    } else {
      write_histogram_csv(os, hist);
    }
  }
  json fit_j;
  try {
    const G2Fit fit = fit_g2(hist);
    fit_j = {
      {"g2_0", fit.g2_0()},
      {"amplitude", fit.amplitude},
      {"amplitude_err", fit.amplitude_err},
      {"tau_c_ns", fit.tau_c_s * 1e9},
      {"tau_c_err_ns", fit.tau_c_err_s * 1e9},
      {"tau0_ns", fit.tau0_s * 1e9},
      {"tau0_err_ns", fit.tau0_err_s * 1e9},
      {"chi2", fit.chi2},
      {"dof", fit.dof},
      {"iterations", fit.iterations},
      {"degenerate", fit.degenerate},
    };
  } catch (const FitError & e) {
    write_json_file(dir / "g2_fit.json", {{"error", e.what()}, {"residual_norm", e.residual_norm()}});
    throw;
  }
  write_json_file(dir / "g2_fit.json", fit_j);
  json config = {{"file_a", g.file_a}, {"file_b", g.file_b}, {"q", g.q}, {"bin_ps", grid.delta_t.count()},
                 {"tau_ps", al.tau.count()}, {"du", al.du}};
  write_meta(dir, "g2", c, config, args);
  std::cout << fit_j.dump() << '\n';
  return kOk;
}

// find -------------------------------------------------------------------------

struct FindArgs
{
  std::string file_a, file_b, truth;
  int q = 20;
  double delta_t_ns = 1024, target_ns = 128;
  double du_center_ppb = 0, du_range_ppb = 10000, du_step_ppb = 100;
  double alpha = 1e-3;
};

json find_json(const FindResult & r)
{
  json levels = json::array();
  for (const auto & l : r.levels) {
    levels.push_back(candidate_json(l));
  }
  json late = json::array();
  for (const auto & l : r.late_levels) {
    late.push_back(candidate_json(l));
  }
  return {
    {"tau_ps", r.tau.count()},
    {"du", r.du},
    {"du_ppb", r.du * 1e9},
    {"t_ref_ps", r.t_ref.count()},
    {"resolution_ps", r.resolution().count()},
    {"accepted", r.accepted},
    {"warning", r.warning},
    {"reason", r.reason},
    {"degenerate_sweep", r.degenerate_sweep},
    {"levels", levels},
    {"late_levels", late},
  };
}

int cmd_find(const Common & c, const FindArgs & f, const std::vector<std::string> & args)
{
  const EventStream a = load_stream(f.file_a);
  const EventStream b = load_stream(f.file_b);
  FindConfig cfg;
  cfg.q = f.q;
  cfg.delta_t = seconds_to_ticks(f.delta_t_ns * 1e-9);
  cfg.target_delta_t = seconds_to_ticks(f.target_ns * 1e-9);
  cfg.du_center = ppb(f.du_center_ppb);
  cfg.du_range = ppb(f.du_range_ppb);
  cfg.du_step = ppb(f.du_step_ppb);
  cfg.alpha = f.alpha;
  const FindResult r = find_offset(a, b, cfg);
  json out = find_json(r);
  if (!f.truth.empty()) {
    const Truth t = Truth::load(f.truth);
    const TimeTick true_tau = t.tau_at(r.t_ref);
    const double t_ref_s = to_seconds(r.t_ref);
    out["truth"] = {
      {"tau_ps", true_tau.count()},
      {"du", t.du_at(t_ref_s)},
      {"tau_error_ps", (r.tau - true_tau).count()},
      {"du_error", r.du - t.mean_du(to_seconds(a.front()), to_seconds(a.back()))},
    };
  }
  json config = {{"file_a", f.file_a}, {"file_b", f.file_b}, {"q", cfg.q},
                 {"delta_t_ps", cfg.delta_t.count()}, {"target_delta_t_ps", cfg.target_delta_t.count()},
                 {"du_center", cfg.du_center}, {"du_range", cfg.du_range}, {"du_step", cfg.du_step},
                 {"alpha", cfg.alpha}};
  if (!c.out.empty()) {
    const fs::path dir = out_dir(c);
    write_json_file(dir / "find.json", out);
    write_meta(dir, "find", c, config, args);
  }
  std::cout << out.dump(c.out.empty() ? 2 : -1) << '\n';
  return kOk;
}

// track ------------------------------------------------------------------------

struct TrackArgs
{
  std::string file_a, file_b, truth, init;
  double tau_ns = 0, du_ppb = 0;
  std::optional<double> t_ref_ns;
  std::optional<double> beta_ms, window_ns;
  double serve_interval_s = 0.537, du_window_s = 10.74, lost_timeout_s = 1.0;
  bool no_compensate = false;
  double settle_s = 5.0;
  // live
  std::optional<int> listen;
  std::string host;
  double batch_ms = 50;
  int recover = 0;  ///< re-acquisition attempts after a loss (file mode)
};

void write_served(const Common & c, const fs::path & p, const std::vector<ServedSample> & log)
{
  auto os = open_out(p);
  if (c.format == "json") {
    json rows = json::array();
    for (const auto & s : log) {
      rows.push_back({{"t_s", s.t_s()}, {"tau_ps", s.tau.count()}, {"du_ppb", s.du * 1e9},
                      {"pairs_per_s", s.pairs_per_s}, {"accidentals_per_s", s.accidentals_per_s}});
    }
    os << rows.dump(2) << '\n';
  } else {
    write_tracking_csv(os, log);
  }
}

struct TrackOutcome
{
  std::vector<ServedSample> log;
  std::optional<TimeTick> lost_at;
  json recoveries = json::array();

  static TrackOutcome of(const Tracker & tr) { return {tr.log(), tr.state().lost_at, json::array()}; }
};

json track_summary(const TrackArgs & ta, const TrackerConfig & cfg, const TrackOutcome & out)
{
  const auto & log = out.log;
  json s;
  s["served"] = log.size();
  s["lost"] = out.lost_at.has_value();
  s["lost_at_s"] = out.lost_at ? json(to_seconds(*out.lost_at)) : json(nullptr);
  if (!out.recoveries.empty()) {
    s["recoveries"] = out.recoveries;
  }
  std::vector<const ServedSample *> used;
  for (const auto & x : log) {
    if (x.t_s() - to_seconds(log.front().t) + cfg.serve_interval_s >= ta.settle_s) {
      used.push_back(&x);
    }
  }
  s["settle_s"] = ta.settle_s;
  if (log.empty()) {
    s["evaluated"] = 0;
    return s;
  }
  s["evaluated"] = used.size();
  if (used.size() < 2) {
    return s;
  }
  double pairs = 0, acc = 0;
  for (const auto * x : used) {
    pairs += x->pairs_per_s;
    acc += x->accidentals_per_s;
  }
  const double n = static_cast<double>(used.size());
  s["pairs_per_s"] = pairs / n;
  s["accidentals_per_s"] = acc / n;
  // Jitter about the best straight line, which needs no ground truth.
  {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double t0 = used.front()->t_s();
    const double y0 = static_cast<double>(used.front()->tau.count());
    for (const auto * x : used) {
      const double tx = x->t_s() - t0;
      const double y = static_cast<double>(x->tau.count()) - y0;
      sx += tx, sy += y, sxx += tx * tx, sxy += tx * y;
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double icpt = (sy - slope * sx) / n;
    double ss = 0;
    for (const auto * x : used) {
      const double e = static_cast<double>(x->tau.count()) - y0 - (icpt + slope * (x->t_s() - t0));
      ss += e * e;
    }
    s["jitter_rms_ns"] = std::sqrt(ss / n) * 1e-3;
  }
  if (pairs > 0) {
    const double f = std::clamp((pairs - acc) / pairs, 1e-3, 1.0);
    s["signal_fraction"] = f;
  }
  if (!ta.truth.empty()) {
    const Truth t = Truth::load(ta.truth);
    double se = 0, sm = 0, sdu = 0;
    std::size_t ndu = 0;
    for (const auto * x : used) {
      const double e = static_cast<double>((x->tau - t.tau_at(x->t)).count());
      se += e * e;
      sm += e;
      const double t1 = x->t_s();
      const double t0 = t1 - cfg.du_window_s;
      if (t0 >= to_seconds(log.front().t)) {
        const double d = x->du - t.mean_du(t0, t1);
        sdu += d * d;
        ++ndu;
      }
    }
    s["rms_error_ns"] = std::sqrt(se / n) * 1e-3;
    s["mean_error_ns"] = sm / n * 1e-3;
    s["du_rms_error_ppb"] = ndu > 0 ? json(std::sqrt(sdu / static_cast<double>(ndu)) * 1e9) : json(nullptr);
    if (s.contains("signal_fraction")) {
      const double du_true = t.mean_du(to_seconds(used.front()->t), to_seconds(used.back()->t));
      s["expected_lag_ns"] =
        to_seconds(expected_lag(du_true, cfg.beta_s, s["signal_fraction"].get<double>())) * 1e9;
    }
  }
  return s;
}

TrackerConfig tracker_config(const Common & c, const TrackArgs & ta, const Alignment & al)
{
  TrackerConfig cfg;
  if (c.preset == "tracking") {
    cfg.beta_s = 0.05;
    cfg.window = std::chrono::nanoseconds(256);
  }
  cfg.beta_s = ta.beta_ms ? *ta.beta_ms * 1e-3 : cfg.beta_s;
  if (ta.window_ns) {
    cfg.window = seconds_to_ticks(*ta.window_ns * 1e-9);
  }
  cfg.serve_interval_s = ta.serve_interval_s;
  cfg.du_window_s = ta.du_window_s;
  cfg.lost_timeout_s = ta.lost_timeout_s;
  cfg.compensate = !ta.no_compensate;
  cfg.initial_tau = al.tau;
  cfg.initial_du = al.du;
  cfg.t_ref = al.t_ref;
  cfg.validate();
  return cfg;
}

json tracker_config_json(const TrackerConfig & cfg)
{
  return {{"beta_s", cfg.beta_s},
          {"window_ps", cfg.window.count()},
          {"serve_interval_s", cfg.serve_interval_s},
          {"du_window_s", cfg.du_window_s},
          {"lost_timeout_s", cfg.lost_timeout_s},
          {"compensate", cfg.compensate},
          {"initial_tau_ps", cfg.initial_tau.count()},
          {"initial_du", cfg.initial_du},
          {"t_ref_ps", cfg.t_ref ? json(cfg.t_ref->count()) : json(nullptr)}};
}

int finish_track(
  const Common & c, const TrackArgs & ta, const TrackerConfig & cfg, const TrackOutcome & out,
  json config, const std::vector<std::string> & args)
{
  const fs::path dir = out_dir(c);
  write_served(c, dir / (c.format == "json" ? "track.json" : "track.csv"), out.log);
  const json summary = track_summary(ta, cfg, out);
  write_json_file(dir / "track_summary.json", summary);
  write_meta(dir, "track", c, config, args);
  std::cout << summary.dump() << '\n';
  if (out.lost_at) {
    json err = {{"error",
                 {{"kind", "tracking_lost"},
                  {"message", "tracking lost"},
                  {"t_s", to_seconds(*out.lost_at)}}}};
    std::cerr << err.dump() << '\n';
    return kTrackingLost;
  }
  return kOk;
}

/// File-mode tracking that re-acquires after each loss, up to ta.recover times.
/// The log keeps the samples served before each loss and continues with the
/// new tracker's.
TrackOutcome track_with_recovery(
  const TrackArgs & ta, const TrackerConfig & cfg, const EventStream & a, const EventStream & b)
{
  TrackOutcome out;
  TrackerConfig cur = cfg;
  std::size_t ia = 0, ib = 0;
  for (int attempt = 0;; ++attempt) {
    Tracker tr(cur);
    while (!tr.state().lost && (ia < a.size() || ib < b.size())) {
      if (ia < a.size() && (ib == b.size() || a.ticks[ia] <= b.ticks[ib])) {
        tr.push_a(a.ticks[ia++]);
      } else {
        tr.push_b(b.ticks[ib++]);
      }
    }
    if (!tr.state().lost) {
      tr.finish();
    }
    std::optional<ServedSample> good;
    for (const auto & x : tr.log()) {
      if (x.lost) {
        break;
      }
      out.log.push_back(x);
      good = x;
    }
    if (!tr.state().lost) {
      out.lost_at.reset();
      return out;
    }
    const TimeTick t_lost = *tr.state().lost_at;
    out.lost_at = t_lost;
    if (attempt >= ta.recover) {
      return out;
    }
    const TimeTick last_tau = good ? good->tau : cur.initial_tau;
    const double last_du = good ? good->du : cur.initial_du;
    json rec = {{"lost_at_s", to_seconds(t_lost)}, {"last_du_ppb", last_du * 1e9}};
    try {
      const FindResult r = recover_offset(a.ticks, b.ticks, last_tau, last_du, t_lost);
      rec["tau_ps"] = r.tau.count();
      rec["du_ppb"] = r.du * 1e9;
      rec["t_ref_ps"] = r.t_ref.count();
      out.recoveries.push_back(rec);
      spdlog::info("track: re-acquired at {:.3f} s, du {:.2f} ppb", to_seconds(r.t_ref), r.du * 1e9);
      cur.initial_tau = r.tau;
      cur.initial_du = r.du;
      cur.t_ref = r.t_ref;
      ia = static_cast<std::size_t>(std::lower_bound(a.ticks.begin(), a.ticks.end(), r.t_ref) - a.ticks.begin());
      ib = static_cast<std::size_t>(
        std::lower_bound(b.ticks.begin(), b.ticks.end(), r.t_ref - r.tau - cur.window) - b.ticks.begin());
    } catch (const Error & e) {
      rec["failed"] = e.what();
      out.recoveries.push_back(rec);
      return out;
    }
  }
}

int cmd_track(const Common & c, const TrackArgs & ta, const std::vector<std::string> & args)
{
  const Alignment al = load_alignment(ta.init, ta.tau_ns, ta.du_ppb, ta.t_ref_ns);
  const TrackerConfig cfg = tracker_config(c, ta, al);
  Tracker tr(cfg);
  json config = {{"file_a", ta.file_a}, {"tracker", tracker_config_json(cfg)}};

  std::ifstream fa(ta.file_a, std::ios::binary);
  if (!fa) {
    throw IoError("cannot open " + ta.file_a);
  }
  TimetagReader ra(fa);

  if (ta.listen) {
    // Live: channel b arrives over TCP from `wcps stream`.
    config["live"] = {{"host", ta.host}, {"port", *ta.listen}};
    const int fd = tcp_accept_one(ta.host, static_cast<std::uint16_t>(*ta.listen), [](std::uint16_t p) {
      spdlog::info("track: listening on port {}", p);
      std::cerr << json({{"listening", p}}).dump() << std::endl;
    });
    FdTransport link(fd, true);
    SessionConfig sc;
    sc.batch_interval_s = ta.batch_ms * 1e-3;
    ExchangeSession session(Role::initiator, link, sc);
    run_initiator(session, tr, reader_source(ra));
    return finish_track(c, ta, cfg, TrackOutcome::of(tr), config, args);
  }

  if (ta.file_b.empty()) {
    throw ParameterError("track: need FILE_B or --listen");
  }
  config["file_b"] = ta.file_b;
  std::ifstream fb(ta.file_b, std::ios::binary);
  if (!fb) {
    throw IoError("cannot open " + ta.file_b);
  }
  if (ta.recover > 0) {
    config["recover"] = ta.recover;
    fa.clear();
    fa.seekg(0);
    const EventStream a = read_timetags(fa);
    const EventStream b = read_timetags(fb);
    return finish_track(c, ta, cfg, track_with_recovery(ta, cfg, a, b), config, args);
  }
  TimetagReader rb(fb);
  // Feed both files block by block, interleaved in time order of blocks.
  std::vector<TimeTick> ba, bb;
  std::size_t ia = 0, ib = 0;
  for (;;) {
    if (ia == ba.size() && !ra.done()) {
      ba.clear();
      ia = 0;
      ra.read_block(ba);
    }
    if (ib == bb.size() && !rb.done()) {
      bb.clear();
      ib = 0;
      rb.read_block(bb);
    }
    const bool more_a = ia < ba.size();
    const bool more_b = ib < bb.size();
    if (!more_a && !more_b) {
      break;
    }
    if (more_a && (!more_b || ba[ia] <= bb[ib])) {
      tr.push_a(ba[ia++]);
    } else {
      tr.push_b(bb[ib++]);
    }
  }
  tr.finish();
  return finish_track(c, ta, cfg, TrackOutcome::of(tr), config, args);
}

// stream -----------------------------------------------------------------------

struct StreamArgs
{
  std::string file;
  std::string connect = "127.0.0.1:0";
  int channel = 2;
  double batch_ms = 50;
};

int cmd_stream(const Common & c, const StreamArgs & sa, const std::vector<std::string> & args)
{
  const auto colon = sa.connect.rfind(':');
  if (colon == std::string::npos) {
    throw ParameterError("stream: --connect expects HOST:PORT");
  }
  const std::string host = sa.connect.substr(0, colon);
  const int port = std::stoi(sa.connect.substr(colon + 1));
  if (port <= 0 || port > 65535) {
    throw ParameterError("stream: port out of range");
  }
  std::ifstream is(sa.file, std::ios::binary);
  if (!is) {
    throw IoError("cannot open " + sa.file);
  }
  TimetagReader r(is);
  FdTransport link(tcp_connect(host, static_cast<std::uint16_t>(port)), true);
  SessionConfig sc;
  sc.batch_interval_s = sa.batch_ms * 1e-3;
  ExchangeSession session(Role::responder, link, sc);
  const auto served = run_responder(session, static_cast<std::uint8_t>(sa.channel), reader_source(r));
  spdlog::info("stream: received {} served offsets", served.size());
  if (!c.out.empty()) {
    const fs::path dir = out_dir(c);
    auto os = open_out(dir / "served.csv");
    os << "tau_ps,du_ppb\n" << std::setprecision(12);
    for (const auto & s : served) {
      os << s.tau.count() << ',' << s.du() * 1e9 << '\n';
    }
    write_meta(dir, "stream", c, {{"file", sa.file}, {"connect", sa.connect}, {"channel", sa.channel}}, args);
  }
  return kOk;
}

// surface ----------------------------------------------------------------------

struct SurfaceArgs
{
  std::vector<int> q_list;
  std::vector<double> delta_t_ns_list;
  std::optional<double> s1, s2, c, nu, du_ppb, tau_c_ns;
  std::uint64_t trials = 10000;
  bool normal = false;
};

int cmd_surface(const Common & c, const SurfaceArgs & sa, const std::vector<std::string> & args)
{
  // surface-normal is surface plus the normal-approximation column.
  SuccessModelParams base;
  base.s1 = pick(sa.s1, 100e3);
  base.s2 = pick(sa.s2, 100e3);
  base.c = pick(sa.c, 650.0);
  base.nu = pick(sa.nu, 0.5);
  base.du = ppb(pick(sa.du_ppb, 50.0));
  if (sa.tau_c_ns) {
    base.tau_c_s = *sa.tau_c_ns * 1e-9;
  }
  const bool normal = sa.normal || c.preset == "surface-normal";
  std::vector<int> qs = sa.q_list;
  if (qs.empty()) {
    qs = {14, 16, 18, 20, 22, 24, 26};
  }
  std::vector<double> dts = sa.delta_t_ns_list;
  if (dts.empty()) {
    dts = {1, 4, 16, 64, 256, 1024, 4096};
  }
  std::vector<SurfacePoint> pts;
  std::uint64_t k = 0;
  for (const int q : qs) {
    for (const double dt_ns : dts) {
      SuccessModelParams p = base;
      p.q = q;
      p.delta_t_s = dt_ns * 1e-9;
      SurfacePoint sp;
      sp.q = q;
      sp.delta_t_ps = seconds_to_ticks(p.delta_t_s).count();
      sp.prob = success_probability(p);
      sp.mc = success_probability_mc(p, sa.trials, derive_seed(c.seed, k++));
      if (normal) {
        sp.prob_normal = success_probability_normal(p);
      }
      spdlog::debug("surface: q={} dt={} ns P={:.4f} MC={:.4f}", q, dt_ns, sp.prob, sp.mc.p);
      pts.push_back(sp);
    }
  }
  const fs::path dir = out_dir(c);
  {
    auto os = open_out(dir / (c.format == "json" ? "surface.json" : "surface.csv"));
    if (c.format == "json") {
      json rows = json::array();
      for (const auto & p : pts) {
        json r = {{"q", p.q}, {"delta_t_ps", p.delta_t_ps}, {"prob", p.prob}, {"prob_mc", p.mc.p},
                  {"ci_low", p.mc.ci_low}, {"ci_high", p.mc.ci_high}};
        if (p.prob_normal) {
          r["prob_normal"] = *p.prob_normal;
        }
        rows.push_back(r);
      }
      os << rows.dump(2) << '\n';
    } else {
      write_surface_csv(os, pts);
    }
  }
  json config = {{"s1", base.s1}, {"s2", base.s2}, {"c", base.c}, {"nu", base.nu}, {"du", base.du},
                 {"tau_c_s", base.tau_c_s ? json(*base.tau_c_s) : json(nullptr)},
                 {"q", qs}, {"delta_t_ns", dts}, {"trials", sa.trials}, {"normal", normal}};
  write_meta(dir, "surface", c, config, args);
  return kOk;
}

// Entry ------------------------------------------------------------------------

int error_exit(const std::string & kind, const std::string & message, int code, json extra = json::object())
{
  json e = {{"kind", kind}, {"message", message}};
  for (auto & [k, v] : extra.items()) {
    e[k] = v;
  }
  std::cerr << json({{"error", e}}).dump() << '\n';
  return code;
}

void setup_logging()
{
  auto logger = spdlog::stderr_color_mt("wcps");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  const char * env = std::getenv("WCPS_LOG");
  spdlog::set_level(env != nullptr ? spdlog::level::from_str(env) : spdlog::level::warn);
}

int run(std::vector<std::string> args);

int cmd_rerun(const std::string & meta_path, const std::string & out)
{
  const json meta = read_json_file(meta_path);
  std::vector<std::string> args = meta.at("args").get<std::vector<std::string>>();
  if (!out.empty()) {
    args.push_back("--out");
    args.push_back(out);
  }
  return run(args);
}

int run(std::vector<std::string> args)
{
  CLI::App app{"wcps: clock synchronization from bunched photon timestamps"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Common c;
  auto add_common = [&](CLI::App * sub, bool duration) {
    sub->add_option("--seed", c.seed, "run seed");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--format", c.format, "tabular output format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--preset", c.preset, "parameter preset")->check(CLI::IsMember(kPresets));
    if (duration) {
      sub->add_option("--duration", c.duration, "acquisition length in seconds");
    }
  };

  SimulateArgs sim;
  auto * s = app.add_subcommand("simulate", "generate two timetag files and ground truth");
  add_common(s, true);
  s->add_option("--s1", sim.s1, "channel a singles, counts/s");
  s->add_option("--s2", sim.s2, "channel b singles, counts/s");
  s->add_option("--g2-peak", sim.g2_peak);
  s->add_option("--coinc-rate", sim.coinc_rate, "excess coincidence rate, counts/s (sets g2-peak)");
  s->add_option("--tau-c-ns", sim.tau_c_ns);
  s->add_option("--dark-a", sim.dark_a, "counts/s");
  s->add_option("--dark-b", sim.dark_b, "counts/s");
  s->add_option("--jitter-ps", sim.jitter_ps);
  s->add_option("--dead-time-ns", sim.dead_time_ns);
  s->add_option("--loss-a-db", sim.loss_a_db);
  s->add_option("--loss-b-db", sim.loss_b_db);
  s->add_option("--offset-ns", sim.offset_ns, "clock b offset");
  s->add_option("--du-ppb", sim.du_ppb, "clock b frequency offset");
  s->add_option("--drift-ppb-per-s", sim.drift_ppb_s);
  s->add_option("--rw-step-ppb", sim.rw_step_ppb, "random-walk step per second");
  s->add_option("--rw-bound-ppb", sim.rw_bound_ppb, "reflecting bound, 0 = none");
  s->add_option("--truth-step-s", sim.truth_step_s);

  G2Args g2;
  auto * g = app.add_subcommand("g2", "coincidence histogram and g2 fit");
  add_common(g, false);
  g->add_option("FILE_A", g2.file_a)->required();
  g->add_option("FILE_B", g2.file_b)->required();
  g->add_option("--q", g2.q, "log2 of the number of bins");
  g->add_option("--bin-ns", g2.bin_ns);
  g->add_option("--init", g2.init, "find.json to align b first");
  g->add_option("--tau-ns", g2.tau_ns);
  g->add_option("--du-ppb", g2.du_ppb);
  g->add_option("--t-ref-ns", g2.t_ref_ns);

  FindArgs fa;
  auto * f = app.add_subcommand("find", "sweep and refine the coincidence peak");
  add_common(f, false);
  f->add_option("FILE_A", fa.file_a)->required();
  f->add_option("FILE_B", fa.file_b)->required();
  f->add_option("--q", fa.q);
  f->add_option("--delta-t-ns", fa.delta_t_ns);
  f->add_option("--target-ns", fa.target_ns);
  f->add_option("--du-center-ppb", fa.du_center_ppb);
  f->add_option("--du-range-ppb", fa.du_range_ppb);
  f->add_option("--du-step-ppb", fa.du_step_ppb);
  f->add_option("--alpha", fa.alpha, "false-accept rate");
  f->add_option("--truth", fa.truth, "truth.json from simulate");

  TrackArgs ta;
  auto * t = app.add_subcommand("track", "track the offset from files or a live peer");
  add_common(t, false);
  t->add_option("FILE_A", ta.file_a)->required();
  t->add_option("FILE_B", ta.file_b);
  t->add_option("--init", ta.init, "find.json with the starting offset");
  t->add_option("--tau-ns", ta.tau_ns);
  t->add_option("--du-ppb", ta.du_ppb);
  t->add_option("--t-ref-ns", ta.t_ref_ns);
  t->add_option("--beta-ms", ta.beta_ms);
  t->add_option("--window-ns", ta.window_ns);
  t->add_option("--serve-interval-s", ta.serve_interval_s);
  t->add_option("--du-window-s", ta.du_window_s);
  t->add_option("--lost-timeout-s", ta.lost_timeout_s);
  t->add_option("--recover", ta.recover, "re-acquire up to N times after tracking is lost (file mode)");
  t->add_flag("--no-compensate", ta.no_compensate);
  t->add_option("--settle-s", ta.settle_s, "skip this long before scoring");
  t->add_option("--truth", ta.truth);
  t->add_option("--listen", ta.listen, "accept channel b from `wcps stream` on this port (0 = any)");
  t->add_option("--host", ta.host, "listen address");
  t->add_option("--batch-ms", ta.batch_ms);

  StreamArgs sa;
  auto * st = app.add_subcommand("stream", "send a timetag file to a listening tracker");
  add_common(st, false);
  st->add_option("FILE", sa.file)->required();
  st->add_option("--connect", sa.connect, "HOST:PORT")->required();
  st->add_option("--channel", sa.channel);
  st->add_option("--batch-ms", sa.batch_ms);

  SurfaceArgs su;
  auto * sf = app.add_subcommand("surface", "success-probability surface over (q, delta t)");
  add_common(sf, false);
  sf->add_option("--q-list", su.q_list)->delimiter(',');
  sf->add_option("--delta-t-ns-list", su.delta_t_ns_list)->delimiter(',');
  sf->add_option("--s1", su.s1);
  sf->add_option("--s2", su.s2);
  sf->add_option("--c", su.c, "excess coincidence rate, counts/s");
  sf->add_option("--nu", su.nu);
  sf->add_option("--du-ppb", su.du_ppb, "residual frequency offset");
  sf->add_option("--tau-c-ns", su.tau_c_ns);
  sf->add_option("--trials", su.trials, "Monte Carlo trials per point");
  sf->add_flag("--normal", su.normal, "add the normal-approximation column");

  std::string meta_path, rerun_out;
  auto * rr = app.add_subcommand("rerun", "repeat a run from its .meta.json");
  rr->add_option("META", meta_path)->required();
  rr->add_option("--out", rerun_out);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp & e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion & e) {
    return app.exit(e);
  } catch (const CLI::ParseError & e) {
    return error_exit("usage", e.what(), kUsage);
  }

  if (*s) {
    return cmd_simulate(c, sim, args);
  }
  if (*g) {
    return cmd_g2(c, g2, args);
  }
  if (*f) {
    return cmd_find(c, fa, args);
  }
  if (*t) {
    return cmd_track(c, ta, args);
  }
  if (*st) {
    return cmd_stream(c, sa, args);
  }
  if (*sf) {
    return cmd_surface(c, su, args);
  }
  return cmd_rerun(meta_path, rerun_out);
}
}  // namespace

int main(int argc, char ** argv)
{
  setup_logging();
  try {
    return run(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const NotFoundError & e) {
    return error_exit(e.kind(), e.what(), kNotFound, {{"best", candidate_json(e.best())}});
  } catch (const ParseError & e) {
    return error_exit(e.kind(), e.what(), kParse, {{"offset", e.offset()}});
  } catch (const PeerLost & e) {
    return error_exit(e.kind(), e.what(), kPeerLost);
  } catch (const FitError & e) {
    return error_exit(e.kind(), e.what(), kFailure, {{"residual_norm", e.residual_norm()}});
  } catch (const ParameterError & e) {
    return error_exit(e.kind(), e.what(), kUsage);
  } catch (const Error & e) {
    return error_exit(e.kind(), e.what(), kFailure);
  } catch (const json::exception & e) {
    return error_exit("parse", e.what(), kParse);
  } catch (const std::exception & e) {
    return error_exit("internal", e.what(), kFailure);
  }
}
