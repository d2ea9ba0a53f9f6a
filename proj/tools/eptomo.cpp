// eptomo command-line front end.
//
//   eptomo <command> [--config PATH] [--seed N] [--out DIR] [--threads N] [--in PATH...]
//
// Exit codes: 0 success, 1 usage / configuration, 2 data error, 3 numerical error.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "artifacts.hpp"
#include "eptomo/eptomo.hpp"

namespace {

using namespace eptomo;
using cli::ArtifactWriter;
using cli::json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  int threads = 1;
  std::vector<std::string> inputs;
};

// ---------------------------------------------------------------------------
// Config access

template <typename T>
T get_or(const json& block, const char* key, T fallback) {
  if (!block.is_object() || !block.contains(key)) return fallback;
  try {
    return block.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

json block_of(const json& config, const char* name) {
  if (!config.contains(name)) return json::object();
  if (!config.at(name).is_object()) throw UsageError(std::string("config block '") + name + "' must be an object");
  return config.at(name);
}

std::vector<WaveplateSetting> settings_from(const json& block, const char* key, std::vector<WaveplateSetting> fallback) {
  if (!block.contains(key)) return fallback;
  std::vector<WaveplateSetting> out;
  for (const auto& s : block.at(key)) {
    if (!s.is_array() || s.size() != 2) throw UsageError(std::string("'") + key + "' entries must be [qwp_deg, hwp_deg]");
    out.push_back(WaveplateSetting{s[0].get<double>(), s[1].get<double>()});
  }
  return out;
}

json load_config(const Options& opt) {
  json config = json::object();
  if (!opt.config_path.empty()) {
    std::ifstream in(opt.config_path);
    if (!in) throw UsageError("cannot open config '" + opt.config_path + "'");
    try {
      config = json::parse(in);
    } catch (const json::exception& e) {
      throw UsageError("config '" + opt.config_path + "' is not valid JSON: " + e.what());
    }
    if (!config.is_object()) throw UsageError("config must be a JSON object");
  }
  if (opt.seed) config["seed"] = *opt.seed;
  if (!config.contains("seed")) config["seed"] = 1;
  // Only the block of the running command (and the seed) identifies the run.
  json resolved = json::object();
  resolved["seed"] = config["seed"];
  resolved["command"] = opt.command;
  if (config.contains(opt.command)) resolved[opt.command] = config[opt.command];
  json inputs = json::array();
  for (const auto& p : opt.inputs) inputs.push_back(fs::path(p).filename().string());
  resolved["inputs"] = inputs;
  return resolved;
}

std::uint64_t seed_of(const json& config) { return config.at("seed").get<std::uint64_t>(); }

std::string require_input(const Options& opt, std::size_t index, const char* what) {
  if (opt.inputs.size() <= index) throw UsageError(std::string("missing --in ") + what);
  return opt.inputs[index];
}

std::string csv_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

json matrix_json(const ComplexMatrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back({m(i, j).real(), m(i, j).imag()});
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// simulate

DensityMatrix state_from(const json& s, std::array<double, 2>& weights) {
  const std::string kind = get_or<std::string>(s, "kind", "eraser");
  if (kind == "bell") {
    weights = {0.5, 0.5};
    return DensityMatrix::from_pure(bell_phi_plus());
  }
  if (kind == "werner") {
    weights = {0.5, 0.5};
    return werner_state(get_or(s, "p", 1.0));
  }
  if (kind != "eraser") throw UsageError("simulate.state.kind must be eraser, bell or werner");
  const double a = get_or(s, "a", 0.64);
  const double sep = deg_to_rad(get_or(s, "separation_deg", 121.0));
  const double axis = deg_to_rad(get_or(s, "axis_deg", 45.0));
  weights = {a, 1.0 - a};
  return eraser_state(a, photon_ket(axis - sep / 2, 0.0), photon_ket(axis + sep / 2, 0.0), get_or(s, "kappa", 0.5),
                      get_or(s, "lambda", 0.8));
}

ExperimentTruth truth_from(const json& b, std::uint64_t seed) {
  ExperimentTruth t;
  t.rho_true = state_from(b.contains("state") ? b.at("state") : json::object(), t.beam_weights);
  t.gamma_in = get_or(b, "gamma_in", t.gamma_in);
  t.photon_prob = get_or(b, "photon_prob", t.photon_prob);
  t.collection_efficiency = get_or(b, "collection_efficiency", t.collection_efficiency);
  t.filter_acceptance = get_or(b, "filter_acceptance", t.filter_acceptance);
  t.electron_rate_hz = get_or(b, "electron_rate_hz", t.electron_rate_hz);
  t.exposure_s = get_or(b, "exposure_s", t.exposure_s);
  if (b.contains("coincidences_per_setting")) {
    const double per_s = t.electron_rate_hz * t.photon_prob * t.collection_efficiency;
    if (!(per_s > 0.0)) throw UsageError("coincidences_per_setting needs a positive coincidence rate");
    t.exposure_s = b.at("coincidences_per_setting").get<double>() / per_s;
  }
  t.background_rate_hz = get_or(b, "background_rate_hz", t.background_rate_hz);
  t.detector_delays_ps = get_or(b, "detector_delays_ps", t.detector_delays_ps);
  t.jitter_ps = get_or(b, "jitter_ps", t.jitter_ps);
  t.efficiency.detector1 = get_or(b, "efficiency1", 1.0);
  t.efficiency.detector2 = get_or(b, "efficiency2", 1.0);
  t.scan_counts_per_setting = get_or<std::uint64_t>(b, "scan_counts_per_setting", t.scan_counts_per_setting);
  if (b.contains("layout")) {
    const json& l = b.at("layout");
    t.layout.width = get_or(l, "width", t.layout.width);
    t.layout.height = get_or(l, "height", t.layout.height);
    t.layout.period_px = get_or(l, "period_px", t.layout.period_px);
    t.layout.angle_deg = get_or(l, "angle_deg", t.layout.angle_deg);
    t.layout.phase_offset = get_or(l, "phase_offset", t.layout.phase_offset);
  }
  t.seed = seed;
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return t;
}

void cmd_simulate(const Options&, const json& config, const ArtifactWriter& w) {
  const json b = block_of(config, "simulate");
  const ExperimentTruth truth = truth_from(b, seed_of(config));
  const auto settings = settings_from(b, "settings", {{30, 28}, {30, 95}, {74, 80}});
  const int bins = get_or(b, "phase_bins", 32);

  std::vector<CountEntry> entries = simulate_counts(truth, settings, bins);
  std::vector<ScanCount> scan;
  if (get_or(b, "scan", true)) {
    scan = simulate_scan(truth, scan_grid(get_or(b, "scan_step_deg", 10.0), get_or(b, "scan_max_deg", 90.0)));
    const auto extra = scan_count_entries(scan);
    entries.insert(entries.end(), extra.begin(), extra.end());
    std::ostringstream sc;
    write_scan_counts(sc, scan);
    w.text("scan.csv", sc.str());
  }
  std::ostringstream counts;
  write_count_entries(counts, entries);
  w.text("counts.csv", counts.str());

  std::ostringstream rho;
  write_density_matrix(rho, truth.rho_true);
  w.text("truth.txt", rho.str());
  std::ostringstream eff;
  write_density_matrix(eff, truth.effective_state());
  w.text("truth_effective.txt", eff.str());

  json report;
  report["coincidences_per_setting"] = truth.expected_coincidences_per_setting();
  report["settings"] = settings.size();
  report["phase_bins"] = bins;
  report["scan_records"] = scan.size();
  const DensityMatrix eff_state = truth.effective_state();
  report["truth"] = {{"min_pt_eig", ppt_min_eigenvalue(eff_state)},
                     {"concurrence", concurrence(eff_state)},
                     {"bell_fidelity", bell_fidelity_opt(eff_state).fidelity},
                     {"bell_fidelity_coherent", bell_fidelity_opt(truth.rho_true).fidelity}};

  if (b.contains("events")) {
    const json& ev = b.at("events");
    const auto ev_settings = settings_from(ev, "settings", {{0, 0}});
    const double duration = get_or(ev, "duration_s", 1.0);
    json files = json::array();
    for (std::size_t i = 0; i < ev_settings.size(); ++i) {
      const EventStreams s = simulate_events(truth, ev_settings[i], duration, static_cast<std::uint32_t>(i));
      std::ostringstream body;
      write_events(body, merge_streams(s));
      const std::string name = "events_" + std::to_string(i) + ".csv";
      w.text(name, body.str(),
             "# setting=" + csv_double(ev_settings[i].qwp_deg) + "," + csv_double(ev_settings[i].hwp_deg) + "\n");
      files.push_back({{"file", name},
                       {"electrons", s.electrons.size()},
                       {"photon1", s.photon1.size()},
                       {"photon2", s.photon2.size()}});
    }
    report["events"] = files;
  }
  w.json_file("simulate.json", report);
}

// ---------------------------------------------------------------------------
// pipeline

WaveplateSetting parse_setting_header(const std::string& text, const std::string& path) {
  const auto v = cli::header_value(text, "setting");
  if (!v) throw DataError("'" + path + "': no '# setting=' line; give pipeline.settings in the config");
  const auto f = detail::split_csv(*v);
  if (f.size() != 2) throw DataError("'" + path + "': setting must be qwp,hwp");
  return WaveplateSetting{detail::parse_double(f[0], "qwp_deg"), detail::parse_double(f[1], "hwp_deg")};
}

void cmd_pipeline(const Options& opt, const json& config, const ArtifactWriter& w) {
  if (opt.inputs.empty()) throw UsageError("pipeline needs at least one --in event file");
  const json b = block_of(config, "pipeline");
  const auto settings = settings_from(b, "settings", {});
  if (!settings.empty() && settings.size() != opt.inputs.size()) {
    throw UsageError("pipeline.settings must list one setting per input file");
  }
  PipelineOptions po;
  po.bin_width_ps = get_or<std::int64_t>(b, "bin_width_ps", po.bin_width_ps);
  po.range_ps = get_or<std::int64_t>(b, "range_ps", po.range_ps);
  po.phase_bins = get_or(b, "phase_bins", po.phase_bins);
  po.background_window_count = get_or(b, "background_windows", po.background_window_count);
  po.shape.width = get_or(b, "width", po.shape.width);
  po.shape.height = get_or(b, "height", po.shape.height);

  std::vector<CountEntry> entries;
  std::ostringstream hist;
  std::ostringstream fringe;
  hist << "dataset,detector,centre_ps,count\n";
  fringe << "dataset,detector,bin,phase_rad,counts,model\n";
  json results = json::array();
  for (std::size_t i = 0; i < opt.inputs.size(); ++i) {
    const auto art = cli::read_artifact(opt.inputs[i]);
    const WaveplateSetting setting = settings.empty() ? parse_setting_header(art.text, opt.inputs[i]) : settings[i];
    std::istringstream in(art.text);
    std::vector<DetectionEvent> events = read_events(in);
    sort_by_time(events);
    const PipelineResult r = run_pipeline(split_streams(events), po);
    const auto e = pipeline_count_entries(r, setting);
    entries.insert(entries.end(), e.begin(), e.end());

    json dets = json::array();
    for (Detector d : kDetectors) {
      const auto& dr = r[d];
      for (std::size_t k = 0; k < dr.histogram.counts.size(); ++k) {
        hist << i << ',' << detector_number(d) << ',' << csv_double(dr.histogram.centre(k)) << ','
             << dr.histogram.counts[k] << '\n';
      }
      for (int k = 0; k < dr.fringe.bins(); ++k) {
        const double phi = dr.fringe.centre(k);
        const double model = dr.fit.amplitude * (1.0 + dr.fit.visibility * std::cos(phi + dr.fit.phase));
        fringe << i << ',' << detector_number(d) << ',' << k << ',' << csv_double(phi) << ','
               << csv_double(dr.fringe.values[static_cast<std::size_t>(k)]) << ',' << csv_double(model) << '\n';
      }
      dets.push_back({{"detector", detector_number(d)},
                      {"window_ps", {dr.window.lo_ps, dr.window.hi_ps}},
                      {"window_width_ps", dr.window.width_ps()},
                      {"snr", dr.window.snr()},
                      {"background_per_bin", dr.window.background},
                      {"amplitude", dr.fit.amplitude},
                      {"visibility", dr.fit.visibility},
                      {"phase_rad", dr.fit.phase},
                      {"residual_rms", dr.fit.residual_rms}});
    }
    results.push_back({{"input", fs::path(opt.inputs[i]).filename().string()},
                       {"setting", {setting.qwp_deg, setting.hwp_deg}},
                       {"fringe_period_px", r.geometry.period_px()},
                       {"fringe_angle_deg", r.geometry.angle_rad() * 180.0 / std::numbers::pi},
                       {"relative_phase_cycles", r.relative_phase_cycles()},
                       {"detectors", dets}});
  }
  std::ostringstream counts;
  write_count_entries(counts, entries);
  w.text("counts.csv", counts.str());
  w.text("coincidence_histogram.csv", hist.str());
  w.text("fringes.csv", fringe.str());
  w.json_file("pipeline.json", {{"datasets", results}});
}

// ---------------------------------------------------------------------------
// scan-mle

void cmd_scan_mle(const Options& opt, const json& config, const ArtifactWriter& w) {
  const std::string path = require_input(opt, 0, "scan count file");
  const json b = block_of(config, "scan-mle");
  const auto art = cli::read_artifact(path);
  std::istringstream in(art.text);
  const std::vector<ScanCount> scan = read_scan_counts(in);
  if (scan.empty()) throw DataError("'" + path + "' holds no scan counts");

  MleOptions mo;
  mo.tolerance = get_or(b, "tolerance", mo.tolerance);
  mo.max_iterations = get_or(b, "max_iterations", mo.max_iterations);

  json report;
  std::ostringstream table;
  table << "side,x,y,z,purity\n";
  std::map<Side, BlochVector> vecs;
  for (Side side : {Side::left, Side::right}) {
    const auto records = photon_records_for_side(scan, side);
    if (records.empty()) continue;
    const MleResult r = mle_qubit(records, mo);
    const BlochVector v = bloch(r.state);
    vecs[side] = v;
    std::ostringstream m;
    write_density_matrix(m, r.state);
    w.text(std::string("photon_") + side_code(side) + ".txt", m.str());
    table << side_code(side) << ',' << csv_double(v.x) << ',' << csv_double(v.y) << ',' << csv_double(v.z) << ','
          << csv_double((r.state.matrix() * r.state.matrix()).trace().real()) << '\n';
    report[side_code(side)] = {{"bloch", {v.x, v.y, v.z}},
                               {"iterations", r.iterations},
                               {"converged", r.converged},
                               {"log_likelihood", r.log_likelihood.back()},
                               {"state", matrix_json(r.state.matrix())}};
  }
  if (vecs.size() == 2) report["separation_deg"] = bloch_angle(vecs[Side::left], vecs[Side::right]);
  w.text("bloch.csv", table.str());
  w.json_file("scan_mle.json", report);
}

// ---------------------------------------------------------------------------
// reconstruct

ChainConfig chain_config_from(const json& b, std::uint64_t seed, int threads) {
  ChainConfig c;
  c.n_chains = get_or(b, "n_chains", c.n_chains);
  c.n_iter = get_or<std::int64_t>(b, "n_iter", c.n_iter);
  c.burn_in_fraction = get_or(b, "burn_in", c.burn_in_fraction);
  c.beta = get_or(b, "beta", c.beta);
  c.adapt_target = get_or(b, "adapt_target", c.adapt_target);
  c.thinning = get_or(b, "thinning", c.thinning);
  c.adapt_window = get_or(b, "adapt_window", c.adapt_window);
  const std::string prior = get_or<std::string>(b, "prior", "gaussian");
  if (prior == "gaussian") {
    c.prior = ReferencePrior::gaussian;
  } else if (prior == "flat") {
    c.prior = ReferencePrior::flat;
  } else {
    throw UsageError("reconstruct.prior must be gaussian or flat");
  }
  c.seed = seed;
  c.threads = threads;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

std::vector<CountRecord> read_records(const std::string& path) {
  const auto art = cli::read_artifact(path);
  std::istringstream in(art.text);
  const auto entries = read_count_entries(in);
  if (entries.empty()) throw DataError("'" + path + "' holds no count records");
  return count_records(entries);
}

void cmd_reconstruct(const Options& opt, const json& config, const ArtifactWriter& w) {
  const std::string path = require_input(opt, 0, "count file");
  const auto records = read_records(path);
  const ChainConfig cfg = chain_config_from(block_of(config, "reconstruct"), seed_of(config), opt.threads);
  const PosteriorSamples samples = run_chains(cfg, records);

  std::ostringstream body;
  write_samples(body, samples);
  w.text("samples.csv", body.str());

  std::ostringstream trace;
  trace << "chain,iteration,log_post,beta,cumulative_acceptance\n";
  json chains = json::array();
  for (std::size_t c = 0; c < samples.reports.size(); ++c) {
    const auto& r = samples.reports[c];
    for (const auto& t : r.trace) {
      trace << c << ',' << t.iteration << ',' << csv_double(t.log_post) << ',' << csv_double(t.beta) << ','
            << csv_double(t.cumulative_acceptance) << '\n';
    }
    chains.push_back({{"chain", c},
                      {"final_beta", r.final_beta},
                      {"burn_in_acceptance", r.burn_in_acceptance},
                      {"acceptance_rate", r.acceptance_rate}});
  }
  w.text("trace.csv", trace.str());
  for (const auto& msg : samples.warnings) std::cerr << "warning: " << msg << '\n';
  w.json_file("reconstruct.json", {{"samples", samples.size()},
                                   {"records", records.size()},
                                   {"mean_acceptance", samples.mean_acceptance()},
                                   {"chains", chains},
                                   {"warnings", samples.warnings}});
}

// ---------------------------------------------------------------------------
// analyze

PosteriorSamples read_sample_file(const std::string& path) {
  const auto art = cli::read_artifact(path);
  std::istringstream in(art.text);
  PosteriorSamples s = read_samples(in);
  if (s.size() == 0) throw DataError("'" + path + "' holds no samples");
  return s;
}

json summary_json(const ScalarSummary& s) {
  return {{"mean", s.mean}, {"sd", s.sd}, {"n", s.n}, {"significance", s.significance()}};
}

std::string histogram_csv(const std::string& name, const ScalarSummary& s) {
  std::ostringstream os;
  os << name << "_centre,count\n";
  for (std::size_t k = 0; k < s.histogram.counts.size(); ++k) {
    os << csv_double(s.histogram.centre(k)) << ',' << s.histogram.counts[k] << '\n';
  }
  return os.str();
}

void cmd_analyze(const Options& opt, const json& config, const ArtifactWriter& w) {
  const PosteriorSamples samples = read_sample_file(require_input(opt, 0, "sample file"));
  const json b = block_of(config, "analyze");
  const int bins = get_or(b, "bins", 50);

  const MatrixSummary ms = posterior_matrix_summary(samples);
  const DensityMatrix mean(ms.mean);
  const BellFidelityResult opt_u = bell_fidelity_opt(mean);
  FunctionalContext ctx;
  ctx.u = opt_u.u;

  json report;
  report["samples"] = samples.size();
  report["mean_state"] = matrix_json(ms.mean);
  report["bell_unitary"] = matrix_json(opt_u.u);
  json fn;
  std::ostringstream table;
  table << "functional,mean,sd\n";
  for (Functional f : {Functional::min_pt_eig, Functional::bell_fidelity, Functional::concurrence, Functional::eof,
                       Functional::negativity}) {
    const ScalarSummary s = posterior_summary(samples, f, ctx, bins);
    fn[std::string(functional_name(f))] = summary_json(s);
    table << functional_name(f) << ',' << csv_double(s.mean) << ',' << csv_double(s.sd) << '\n';
    if (f == Functional::min_pt_eig) w.text("min_pt_histogram.csv", histogram_csv("min_pt_eig", s));
    if (f == Functional::bell_fidelity) w.text("fidelity_histogram.csv", histogram_csv("bell_fidelity", s));
  }
  fn["mean_state"] = {{"min_pt_eig", ppt_min_eigenvalue(mean)},
                      {"concurrence", concurrence(mean)},
                      {"eof", entanglement_of_formation(mean)},
                      {"bell_fidelity", opt_u.fidelity}};

  if (b.contains("gamma")) {
    const double gamma = b.at("gamma").get<double>();
    if (!(gamma > 0.0 && gamma <= 1.0)) throw UsageError("analyze.gamma must lie in (0, 1]");
    FunctionalContext cc;
    cc.gamma = gamma;
    cc.u = bell_fidelity_opt(coherence_corrected_matrix(mean, gamma)).u;
    const ScalarSummary s = posterior_summary(samples, Functional::corrected_bell_fidelity, cc, bins);
    fn["corrected_bell_fidelity"] = summary_json(s);
    fn["corrected_bell_fidelity"]["gamma"] = gamma;
    table << "corrected_bell_fidelity," << csv_double(s.mean) << ',' << csv_double(s.sd) << '\n';
    w.text("corrected_fidelity_histogram.csv", histogram_csv("corrected_bell_fidelity", s));
  }
  report["functionals"] = fn;

  std::ostringstream rho;
  rho << "row,col,re,im,sd_re,sd_im\n";
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      rho << i << ',' << j << ',' << csv_double(ms.mean(i, j).real()) << ',' << csv_double(ms.mean(i, j).imag()) << ','
          << csv_double(ms.sd_real(i, j)) << ',' << csv_double(ms.sd_imag(i, j)) << '\n';
    }
  }
  w.text("mean_state.csv", rho.str());
  w.text("functionals.csv", table.str());
  w.json_file("analysis.json", report);
}

// ---------------------------------------------------------------------------
// diagnose

void cmd_diagnose(const Options& opt, const json& config, const ArtifactWriter& w) {
  const PosteriorSamples samples = read_sample_file(require_input(opt, 0, "sample file"));
  const json b = block_of(config, "diagnose");
  const int points = get_or(b, "rhat_points", 20);
  const auto max_lag = get_or<std::size_t>(b, "max_lag", 500);

  // Optional second input: the count file, for the log-posterior series.
  std::vector<Series> log_post;
  if (opt.inputs.size() > 1) {
    const auto records = read_records(opt.inputs[1]);
    const LikelihoodModel model(records);
    for (const auto& chain : samples.chains) {
      Series s;
      for (const auto& x : chain) s.push_back(model.from_params(x.m));
      log_post.push_back(std::move(s));
    }
  }
  const std::vector<Series> min_pt = functional_series(samples, Functional::min_pt_eig);

  json report;
  std::ostringstream rhat;
  rhat << "samples_per_chain,rhat_min_pt_eig" << (log_post.empty() ? "" : ",rhat_log_post") << '\n';
  if (samples.chains.size() >= 2) {
    const auto ev = gelman_rubin_evolution(min_pt, points);
    std::vector<RhatPoint> ev_lp;
    if (!log_post.empty()) ev_lp = gelman_rubin_evolution(log_post, points);
    for (std::size_t k = 0; k < ev.size(); ++k) {
      rhat << ev[k].length << ',' << csv_double(ev[k].rhat);
      if (!ev_lp.empty()) rhat << ',' << csv_double(ev_lp[k].rhat);
      rhat << '\n';
    }
    report["rhat_min_pt_eig"] = gelman_rubin(min_pt);
    if (!log_post.empty()) report["rhat_log_post"] = gelman_rubin(log_post);
  } else {
    report["rhat_min_pt_eig"] = nullptr;
  }
  w.text("rhat.csv", rhat.str());

  std::ostringstream ac;
  ac << "chain,lag,autocorrelation\n";
  json ess = json::array();
  for (std::size_t c = 0; c < min_pt.size(); ++c) {
    const Series& s = min_pt[c];
    const std::size_t lag = std::min(max_lag, s.size() > 1 ? s.size() - 1 : 0);
    if (lag == 0) continue;
    const auto r = autocorrelation(s, lag);
    for (std::size_t k = 0; k < r.size(); ++k) ac << c << ',' << k << ',' << csv_double(r[k]) << '\n';
    ess.push_back(effective_sample_size(s));
  }
  w.text("autocorrelation.csv", ac.str());
  report["ess_min_pt_eig"] = ess;

  // Acceptance traces come from the reconstruct trace next to the samples.
  const fs::path trace_path = fs::path(opt.inputs[0]).parent_path() / "trace.csv";
  if (fs::exists(trace_path)) {
    const auto art = cli::read_artifact(trace_path);
    std::istringstream in(art.text);
    std::ostringstream acc;
    acc << "chain,iteration,beta,cumulative_acceptance\n";
    std::string line;
    while (std::getline(in, line)) {
      if (detail::is_skippable(line) || line.rfind("chain,", 0) == 0) continue;
      const auto f = detail::split_csv(line);
      if (f.size() != 5) throw DataError("'" + trace_path.string() + "': malformed trace line");
      acc << f[0] << ',' << f[1] << ',' << f[3] << ',' << f[4] << '\n';
    }
    w.text("acceptance.csv", acc.str());
    report["acceptance_trace"] = "acceptance.csv";
  }
  w.json_file("diagnose.json", report);
}

// ---------------------------------------------------------------------------

int fail(int code, const char* kind, const std::string& command, const std::string& message) {
  json err = {{"error", {{"code", code}, {"kind", kind}, {"command", command}, {"message", message}}}};
  std::cerr << err.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eptomo: electron-photon state tomography"};
  app.require_subcommand(1);
  Options opt;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"simulate", "draw synthetic count tables, scans and event streams"},
      {"pipeline", "event streams -> coincidence windows, fringes and joint counts"},
      {"scan-mle", "scan counts -> maximum-likelihood photon states per beam"},
      {"reconstruct", "joint counts -> posterior samples"},
      {"analyze", "posterior samples -> entanglement report"},
      {"diagnose", "posterior samples -> convergence diagnostics"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "random seed (overrides the config)");
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--in", opt.inputs, "input file(s)");
    sub->callback([&opt, name = name] { opt.command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return fail(1, "usage", opt.command, e.what());
  }

  try {
    const json config = load_config(opt);
    const ArtifactWriter writer(opt.out, opt.command, config);
    if (opt.command == "simulate") {
      cmd_simulate(opt, config, writer);
    } else if (opt.command == "pipeline") {
      cmd_pipeline(opt, config, writer);
    } else if (opt.command == "scan-mle") {
      cmd_scan_mle(opt, config, writer);
    } else if (opt.command == "reconstruct") {
      cmd_reconstruct(opt, config, writer);
    } else if (opt.command == "analyze") {
      cmd_analyze(opt, config, writer);
    } else {
      cmd_diagnose(opt, config, writer);
    }
  } catch (const UsageError& e) {
    return fail(1, "usage", opt.command, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(1, "usage", opt.command, e.what());
  } catch (const DataError& e) {
    return fail(2, "data", opt.command, e.what());
  } catch (const NumericalError& e) {
    return fail(3, "numerical", opt.command, e.what());
  } catch (const std::exception& e) {
    return fail(3, "numerical", opt.command, e.what());
  }
  return 0;
}
