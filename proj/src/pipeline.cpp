#include "sae/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "sae/error.hpp"
#include "sae/model_assisted.hpp"
#include "sae/numeric.hpp"
#include "sae/priors.hpp"
#include "sae/working_model.hpp"

namespace sae {

namespace {

using json = nlohmann::ordered_json;

std::vector<std::string> split_list(const std::vector<std::string>& inputs) {
  std::vector<std::string> out;
  for (const auto& in : inputs) {
    std::string token;
    for (char c : in + ",") {
      if (c == ',' || c == ' ' || c == '\t') {
        if (!token.empty()) out.push_back(token);
        token.clear();
      } else {
        token += c;
      }
    }
  }
  return out;
}

std::string single(const std::string& key, const std::vector<std::string>& inputs) {
  if (inputs.size() != 1) throw ValidationError("config key '" + key + "' expects a single value");
  return inputs.front();
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ValidationError("config key '" + key + "': '" + v + "' is not a number");
  }
  return out;
}

std::uint64_t to_unsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ValidationError("config key '" + key + "': '" + v + "' is not a nonnegative integer");
  }
  return out;
}

bool to_bool(const std::string& key, std::string v) {
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError("config key '" + key + "': '" + v + "' is not a boolean");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::vector<std::string>&)>;

std::map<std::string, Setter> config_keys(const std::filesystem::path& base) {
  auto path_key = [base](std::optional<std::filesystem::path> IngestPaths::*field) -> Setter {
    return [base, field](RunConfig& c, const std::string& k, const std::vector<std::string>& in) {
      c.inputs.*field = base / single(k, in);
    };
  };
  auto dbl = [](auto setter) -> Setter {
    return [setter](RunConfig& c, const std::string& k, const std::vector<std::string>& in) {
      setter(c, to_double(k, single(k, in)));
    };
  };
  auto uint = [](auto setter) -> Setter {
    return [setter](RunConfig& c, const std::string& k, const std::vector<std::string>& in) {
      setter(c, to_unsigned(k, single(k, in)));
    };
  };
  auto flag = [](auto setter) -> Setter {
    return [setter](RunConfig& c, const std::string& k, const std::vector<std::string>& in) {
      setter(c, to_bool(k, single(k, in)));
    };
  };
  std::map<std::string, Setter> keys{
      {"units", [base](RunConfig& c, const std::string& k, const auto& in) { c.inputs.units = base / single(k, in); }},
      {"frame", path_key(&IngestPaths::frame)},
      {"adjacency", path_key(&IngestPaths::adjacency)},
      {"area_covariates", path_key(&IngestPaths::area_covariates)},
      {"output_dir", [base](RunConfig& c, const std::string& k, const auto& in) { c.output_dir = base / single(k, in); }},
      {"methods",
       [](RunConfig& c, const std::string&, const auto& in) {
         c.methods = split_list(in);
         for (const auto& m : c.methods) {
           if (std::find(all_methods().begin(), all_methods().end(), m) == all_methods().end()) {
             throw ValidationError("unknown method '" + m + "'");
           }
         }
         if (c.methods.empty()) throw ValidationError("config key 'methods' is empty");
       }},
      {"clustered", flag([](RunConfig& c, bool v) { c.clustered = v; })},
      {"prediction_scaling",
       [](RunConfig& c, const std::string& k, const auto& in) {
         const auto v = single(k, in);
         if (v == "weight_total") c.prediction_scaling = PredictionScaling::weight_total;
         else if (v == "frame_total") c.prediction_scaling = PredictionScaling::frame_total;
         else throw ValidationError("config key 'prediction_scaling' must be 'weight_total' or 'frame_total'");
         c.simulation.prediction_scaling = c.prediction_scaling;
       }},
      {"seed", uint([](RunConfig& c, std::uint64_t v) { c.seed = v; })},
      {"draws", uint([](RunConfig& c, std::uint64_t v) { c.smoothing.draws = static_cast<int>(v); })},
      {"sigma_u", dbl([](RunConfig& c, double v) { c.smoothing.priors.sigma_threshold = v; })},
      {"sigma_alpha", dbl([](RunConfig& c, double v) { c.smoothing.priors.sigma_tail_prob = v; })},
      {"phi_u", dbl([](RunConfig& c, double v) { c.smoothing.priors.phi_threshold = v; })},
      {"phi_alpha", dbl([](RunConfig& c, double v) { c.smoothing.priors.phi_tail_prob = v; })},
      {"phi_tail",
       [](RunConfig& c, const std::string& k, const auto& in) {
         const auto v = single(k, in);
         if (v == "lower") c.smoothing.priors.phi_tail = PhiTail::lower;
         else if (v == "upper") c.smoothing.priors.phi_tail = PhiTail::upper;
         else throw ValidationError("config key 'phi_tail' must be 'lower' or 'upper'");
       }},
      {"sigma_points", uint([](RunConfig& c, std::uint64_t v) { c.smoothing.grid.sigma_points = static_cast<int>(v); })},
      {"phi_points", uint([](RunConfig& c, std::uint64_t v) { c.smoothing.grid.phi_points = static_cast<int>(v); })},
      {"log_sigma_min", dbl([](RunConfig& c, double v) { c.smoothing.grid.log_sigma_min = v; })},
      {"log_sigma_max", dbl([](RunConfig& c, double v) { c.smoothing.grid.log_sigma_max = v; })},
      {"threads", uint([](RunConfig& c, std::uint64_t v) { c.simulation.threads = v; })},
      {"lattice_size", uint([](RunConfig& c, std::uint64_t v) { c.simulation.lattice_size = v; })},
      {"strata_per_area", uint([](RunConfig& c, std::uint64_t v) { c.simulation.strata_per_area = v; })},
      {"clusters_per_stratum", uint([](RunConfig& c, std::uint64_t v) { c.simulation.clusters_per_stratum = v; })},
      {"sampled_per_stratum", uint([](RunConfig& c, std::uint64_t v) { c.simulation.sampled_per_stratum = v; })},
      {"cluster_size_mean", dbl([](RunConfig& c, double v) { c.simulation.cluster_size_mean = v; })},
      {"intercept", dbl([](RunConfig& c, double v) { c.simulation.intercept = v; })},
      {"coefficients",
       [](RunConfig& c, const std::string& k, const auto& in) {
         const auto values = split_list(in);
         if (values.size() != kSimCovariates) {
           throw ValidationError("config key 'coefficients' needs " + std::to_string(kSimCovariates) + " values");
         }
         for (std::size_t j = 0; j < kSimCovariates; ++j) c.simulation.coefficients[j] = to_double(k, values[j]);
       }},
      {"area_sd", dbl([](RunConfig& c, double v) { c.simulation.area_sd = v; })},
      {"cluster_sd", dbl([](RunConfig& c, double v) { c.simulation.cluster_sd = v; })},
      {"oversampling_ratio", dbl([](RunConfig& c, double v) { c.simulation.oversampling_ratio = v; })},
      {"oversampling_quantile", dbl([](RunConfig& c, double v) { c.simulation.oversampling_quantile = v; })},
      {"icar_variance", dbl([](RunConfig& c, double v) { c.simulation.icar_variance = v; })},
      {"matern_range", dbl([](RunConfig& c, double v) { c.simulation.matern_range = v; })},
      {"matern_smoothness", dbl([](RunConfig& c, double v) { c.simulation.matern_smoothness = v; })},
      {"matern_variance", dbl([](RunConfig& c, double v) { c.simulation.matern_variance = v; })},
      {"surrogate_range", dbl([](RunConfig& c, double v) { c.simulation.surrogate_range = v; })},
      {"replicates", uint([](RunConfig& c, std::uint64_t v) { c.simulation.replicates = v; })},
      {"exact_inclusion_max", uint([](RunConfig& c, std::uint64_t v) { c.simulation.exact_inclusion_max = v; })},
      {"inclusion_replays", uint([](RunConfig& c, std::uint64_t v) { c.simulation.inclusion_replays = v; })},
      {"smoothing", flag([](RunConfig& c, bool v) { c.simulation.smoothing = v; })},
  };
  return keys;
}

std::uint64_t method_stream(const std::string& method) {
  const auto& m = all_methods();
  return static_cast<std::uint64_t>(std::find(m.begin(), m.end(), method) - m.begin());
}

bool wants(const RunConfig& c, const std::string& method) {
  return std::find(c.methods.begin(), c.methods.end(), method) != c.methods.end();
}

json fit_summary(const WorkingModelFit& fit) {
  json coef = json::object();
  for (Eigen::Index j = 0; j < fit.coefficients.size(); ++j) {
    coef[j == 0 ? "intercept" : "z" + std::to_string(j)] = fit.coefficients(j);
  }
  return json{{"coefficients", coef},
              {"converged", fit.converged},
              {"iterations", fit.iterations},
              {"weighted_deviance", fit.final_weighted_deviance},
              {"score_max_norm", fit.weighted_score_norm},
              {"score_tolerance", fit.score_tolerance}};
}

json smoothing_summary(const SmoothingResult& res, const std::vector<std::string>& design_names) {
  json grid = json::array();
  for (const auto& n : res.grid.nodes) {
    json node{{"log_sigma", n.log_sigma}};
    if (n.phi) node["phi"] = *n.phi;
    node["log_posterior"] = n.log_posterior;
    node["weight"] = n.weight;
    grid.push_back(std::move(node));
  }
  json coef = json::object();
  for (std::size_t j = 0; j < res.coefficients.size(); ++j) {
    const auto& s = res.coefficients[j];
    coef[j < design_names.size() ? design_names[j] : "b" + std::to_string(j)] =
        json{{"mean", s.mean}, {"sd", s.sd}, {"lower90", s.lower90}, {"upper90", s.upper90}};
  }
  json out{{"posterior_mean_sigma", res.posterior_mean_sigma}};
  if (res.posterior_mean_phi) out["posterior_mean_phi"] = *res.posterior_mean_phi;
  out["coefficients"] = coef;
  out["draws"] = res.draws.rows();
  out["trimmed_nodes"] = res.grid.trimmed;
  out["grid"] = std::move(grid);
  out["warnings"] = res.warnings;
  return out;
}

json flagged_areas(const AreaEstimateSet& est, EstimateFlag flag) {
  json out = json::array();
  for (const auto& a : est.areas) {
    if (has_flag(a.flags, flag)) out.push_back(a.area_id);
  }
  return out;
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir, Subcommand subcommand) {
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  RunConfig config;
  config.subcommand = subcommand;
  config.output_dir = base_dir / "out";
  const auto keys = config_keys(base_dir);
  bool have_units = false;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const auto it = keys.find(item.name);
    if (it == keys.end()) throw ValidationError("unknown config key '" + item.fullname() + "'");
    it->second(config, item.name, item.inputs);
    have_units = have_units || item.name == "units";
  }
  config.simulation.smoothing_options = config.smoothing;
  if (subcommand == Subcommand::simulate) {
    if (!config.seed) throw ValidationError("config key 'seed' is required for simulate");
    config.simulation.seed = *config.seed;
    config.simulation.validate();
  } else {
    if (!have_units) throw ValidationError("config key 'units' is required");
    for (const auto& p : {std::optional<std::filesystem::path>(config.inputs.units), config.inputs.frame,
                          config.inputs.adjacency, config.inputs.area_covariates}) {
      if (p && !std::filesystem::exists(*p)) throw ValidationError("input file '" + p->string() + "' does not exist");
    }
  }
  if (config.smoothing.draws < 1) throw ValidationError("config key 'draws' must be positive");
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path, Subcommand subcommand) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.parent_path(), subcommand);
}

EstimateReport compute_estimates(const RunConfig& config, const IngestedData& data) {
  const bool need_ma = wants(config, "ma") || wants(config, "sma_iid") || wants(config, "sma_spatial");
  for (const auto* m : {"sh_spatial", "sma_spatial"}) {
    if (wants(config, m) && !data.structure) {
      throw ValidationError(std::string("method '") + m + "' requires an adjacency file");
    }
  }
  if (need_ma && !data.frame) throw ValidationError("model-assisted methods require a frame file");

  json diag;
  diag["areas"] = data.partition.size();
  diag["units"] = data.units.size();
  if (data.frame) diag["frame_cells"] = data.frame->cells.size();
  spdlog::info("ingested {} units over {} areas", data.units.size(), data.partition.size());

  const auto hajek = logit_with_delta(
      hajek_variance(data.units, hajek_estimate(data.units, data.partition), config.clustered));
  AreaEstimateSet ma;
  if (need_ma) {
    const auto fit = fit_weighted_logistic(data.units);
    diag["working_model"] = fit_summary(fit);
    if (!fit.converged) {
      throw NumericalError("working model did not converge (score max-norm " +
                           format_number(fit.weighted_score_norm) + ")");
    }
    ma = logit_with_delta(
        ma_variance(make_residuals(data.units, fit), ma_estimate(data.units, *data.frame, fit, data.partition, config.prediction_scaling),
                    config.clustered));
  }

  const std::uint64_t seed = config.seed.value_or(1);
  auto iid = AreaEffect::iid(data.partition.size());
  std::optional<AreaEffect> spatial;
  if (data.structure) spatial = AreaEffect::bym2(data.structure);

  EstimateReport report;
  json smoothing = json::object();
  for (const auto& method : config.methods) {
    std::vector<EstimateRow> rows;
    if (method == "hajek") {
      rows = direct_rows(hajek, method);
    } else if (method == "ma") {
      rows = direct_rows(ma, method);
    } else {
      const bool is_ma = method.rfind("sma", 0) == 0;
      const auto& input = is_ma ? ma : hajek;
      const auto& effect = method.find("spatial") != std::string::npos ? *spatial : iid;
      SmoothingOptions opts = config.smoothing;
      opts.seed = derive_seed(seed, method_stream(method));
      const auto res = fit_smoothing_model(input, data.area_design, effect, opts);
      for (const auto& w : res.warnings) spdlog::warn("{}: {}", method, w);
      smoothing[method] = smoothing_summary(res, data.area_design_names);
      rows = smoothed_rows(res, input, method);
    }
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  if (!smoothing.empty()) diag["smoothing"] = std::move(smoothing);
  json clamped{{"hajek", flagged_areas(hajek, EstimateFlag::clamped)}};
  if (need_ma) clamped["ma"] = flagged_areas(ma, EstimateFlag::clamped);
  diag["clamped_areas"] = std::move(clamped);
  diag["unsampled_areas"] = flagged_areas(hajek, EstimateFlag::no_direct_estimate);
  report.diagnostics_json = diag.dump(2) + "\n";
  return report;
}

void run_estimate(const RunConfig& config) {
  const auto data = ingest(config.inputs);
  const auto report = compute_estimates(config, data);
  write_estimates(config.output_dir / "estimates.csv", report.rows);
  write_text(config.output_dir / "diagnostics.json", report.diagnostics_json);
  spdlog::info("wrote {} rows to {}", report.rows.size(), (config.output_dir / "estimates.csv").string());
}

std::string format_metrics_table(const SimulationMetrics& metrics) {
  std::ostringstream os;
  os << "Method,RMSE,MAE,90% Cov.,MIL\n";
  for (const auto& m : metrics.methods) {
    os << m.method << ',' << fixed(100.0 * m.rmse, 4) << ',' << fixed(100.0 * m.mae, 4) << ','
       << (m.cov90 ? fixed(100.0 * *m.cov90, 4) : "NA") << ',' << (m.mil ? fixed(100.0 * *m.mil, 4) : "NA") << '\n';
  }
  return os.str();
}

std::string format_replicate_log(const SimulationMetrics& metrics) {
  std::ostringstream os;
  os << "method,replicate,rmse,mae,cov90,mil\n";
  for (const auto& m : metrics.methods) {
    for (std::size_t r = 0; r < m.per_replicate.size(); ++r) {
      const auto& rep = m.per_replicate[r];
      os << m.method << ',' << r << ',' << format_number(rep.rmse) << ',' << format_number(rep.mae) << ','
         << format_number(rep.cov90.value_or(AreaEstimate::kMissing)) << ','
         << format_number(rep.mil.value_or(AreaEstimate::kMissing)) << '\n';
    }
  }
  return os.str();
}

void run_simulate(const RunConfig& config) {
  const auto metrics = run_study(config.simulation);
  for (const auto& w : metrics.warnings) spdlog::warn("{}", w);
  write_text(config.output_dir / "metrics.csv", format_metrics_table(metrics));
  write_text(config.output_dir / "replicates.csv", format_replicate_log(metrics));
  json summary{{"completed_replicates", metrics.completed_replicates},
               {"failed_replicates", metrics.failed_replicates},
               {"warnings", metrics.warnings}};
  write_text(config.output_dir / "simulation.json", summary.dump(2) + "\n");
  spdlog::info("{} replicates completed, {} skipped", metrics.completed_replicates, metrics.failed_replicates);
}

void run_diagnose(const RunConfig& config) {
  const auto data = ingest(config.inputs);
  json diag;
  diag["areas"] = data.partition.size();
  diag["units"] = data.units.size();
  diag["covariates"] = data.units.num_covariates();
  if (data.frame) diag["frame_cells"] = data.frame->cells.size();

  const auto hajek = logit_with_delta(
      hajek_variance(data.units, hajek_estimate(data.units, data.partition), config.clustered));
  if (data.frame) diag["working_model"] = fit_summary(fit_weighted_logistic(data.units));

  const auto& pr = config.smoothing.priors;
  json priors{{"sigma_rate", PcPriorSigma(pr.sigma_threshold, pr.sigma_tail_prob).rate()}};
  if (data.structure) {
    diag["spatial"] = json{{"edges", data.structure->edges.size()},
                           {"scaling_factor", data.structure->scaling_factor}};
    try {
      priors["phi_rate"] = PcPriorPhi(*data.structure, pr.phi_threshold, pr.phi_tail_prob, pr.phi_tail).rate();
    } catch (const DomainError& e) {
      priors["phi_rate_error"] = e.what();
    }
  }
  diag["priors"] = std::move(priors);
  diag["clamped_areas"] = flagged_areas(hajek, EstimateFlag::clamped);
  diag["unsampled_areas"] = flagged_areas(hajek, EstimateFlag::no_direct_estimate);
  diag["degenerate_areas"] = flagged_areas(hajek, EstimateFlag::degenerate_variance);
  write_text(config.output_dir / "diagnostics.json", diag.dump(2) + "\n");

  std::ostringstream os;
  os << "area_id,n_a,clusters,weight_total,population_size,hajek,hajek_se,flags\n";
  for (std::size_t a = 0; a < hajek.areas.size(); ++a) {
    const auto& e = hajek.areas[a];
    const auto& pop = data.partition[a].population_size;
    os << e.area_id << ',' << e.sample_size << ',' << e.cluster_count << ',' << format_number(e.effective_weight_total)
       << ',' << format_number(pop.value_or(AreaEstimate::kMissing)) << ',' << format_number(e.estimate) << ','
       << format_number(std::sqrt(e.variance)) << ',' << flags_to_string(e.flags) << '\n';
  }
  write_text(config.output_dir / "area_summary.csv", os.str());
}

}  // namespace sae
