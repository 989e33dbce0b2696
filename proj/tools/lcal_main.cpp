#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lcal/calibrators.hpp"
#include "lcal/dataset.hpp"
#include "lcal/error.hpp"
#include "lcal/lcn.hpp"
#include "lcal/metrics.hpp"
#include "lcal/parallel.hpp"
#include "lcal/synth.hpp"
#include "lcal/theory.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "missing";
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw lcal::Error(lcal::Err::IoFailure, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw lcal::Error(lcal::Err::IoFailure, "cannot open " + path + " for writing");
  out << text;
  if (!out) throw lcal::Error(lcal::Err::IoFailure, "short write to " + path);
}

// Every run leaves a manifest next to its primary output: the resolved
// configuration plus digests of the inputs, enough to replay the command.
struct Manifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void write() const {
    if (outputs.empty()) return;
    nlohmann::json j;
    j["command"] = command;
    j["version"] = kVersion;
    j["config"] = config;
    nlohmann::json ins = nlohmann::json::object();
    for (const std::string& p : inputs) ins[p] = file_digest(p);
    j["inputs"] = ins;
    j["outputs"] = outputs;
    j["wall_clock_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
            .count();
    write_file(outputs.front() + ".manifest.json", j.dump(2) + "\n");
  }
};

lcal::DatasetFormat format_of(const std::string& path) {
  return path.size() >= 4 && path.substr(path.size() - 4) == ".csv" ? lcal::DatasetFormat::Csv
                                                                    : lcal::DatasetFormat::Binary;
}

std::vector<double> eval_priors(const lcal::CalibrationDataset& d, const std::string& source) {
  if (source == "eval") return lcal::priors_from_labels(d.labels, d.n_classes());
  return d.priors;  // "train": the priors record carried by the dataset
}

int run(int argc, char** argv) {
  CLI::App app{"Local calibration toolkit"};
  app.require_subcommand(1);
  int threads = static_cast<int>(std::thread::hardware_concurrency());
  app.add_option("--threads", threads, "worker threads (LCAL_THREADS overrides)");

  // --- synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_spec, synth_out;
  std::int64_t synth_seed = -1;
  synth->add_option("--spec", synth_spec, "generator config file")->required();
  synth->add_option("--out", synth_out, "output dataset (.lcds or .csv)")->required();
  synth->add_option("--seed", synth_seed, "override the spec seed");

  // --- fit -----------------------------------------------------------------
  auto* fit = app.add_subcommand("fit", "fit a calibrator on a calibration split");
  std::string fit_method, fit_cal, fit_out;
  double fit_val_frac = 0.1, fit_gamma = 10.0, fit_lambda = 1.0, fit_lr = 1e-3,
         fit_dropout = 0.3;
  std::uint64_t fit_seed = 0;
  std::size_t fit_hidden = 64, fit_epochs = 22, fit_batch = 1024;
  fit->add_option("--method", fit_method, "ts|platt|isotonic|dirichlet|lcn")->required();
  fit->add_option("--cal", fit_cal, "calibration dataset")->required();
  fit->add_option("--out", fit_out, "model json path")->required();
  fit->add_option("--val-frac", fit_val_frac, "internal validation fraction");
  fit->add_option("--seed", fit_seed, "fit seed");
  fit->add_option("--gamma", fit_gamma, "kernel bandwidth (lcn)");
  fit->add_option("--lambda", fit_lambda, "similarity weight (lcn)");
  fit->add_option("--hidden", fit_hidden, "hidden width (lcn)");
  fit->add_option("--epochs", fit_epochs, "training epochs (lcn)");
  fit->add_option("--batch", fit_batch, "batch size (lcn)");
  fit->add_option("--lr", fit_lr, "learning rate (lcn)");
  fit->add_option("--dropout", fit_dropout, "dropout rate (lcn)");

  // --- apply ---------------------------------------------------------------
  auto* apply = app.add_subcommand("apply", "apply a fitted model to a dataset");
  std::string apply_model, apply_data, apply_out;
  apply->add_option("--model", apply_model, "model json")->required();
  apply->add_option("--data", apply_data, "input dataset")->required();
  apply->add_option("--out", apply_out, "output dataset")->required();

  // --- eval ----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "compute the six metrics");
  std::string eval_data, eval_report, eval_priors_src = "train", eval_variant = "classwise";
  std::size_t eval_bins = 15, eval_min_bin = 20;
  double eval_gamma = 10.0;
  bool eval_include_self = false;
  eval->add_option("--data", eval_data, "dataset to evaluate")->required();
  eval->add_option("--bins", eval_bins, "confidence bins");
  eval->add_option("--gamma", eval_gamma, "kernel bandwidth");
  eval->add_option("--min-bin", eval_min_bin, "minimum kernel-bin population");
  eval->add_option("--priors", eval_priors_src, "train|eval class weights");
  eval->add_option("--variant", eval_variant, "classwise|vector local metrics");
  eval->add_option("--report", eval_report, "output json (default stdout)");
  eval->add_flag("--include-self", eval_include_self, "keep the anchor in its kernel sums");

  // --- verify --------------------------------------------------------------
  auto* verify = app.add_subcommand("verify", "run a bound-verification harness");
  verify->require_subcommand(1);

  auto* thm2 = verify->add_subcommand("thm2", "generic binning-metric bound");
  std::size_t t2_trials = 200, t2_n = 2000, t2_classes = 4, t2_bins = 15, t2_min_bin = 10;
  double t2_eps = 0.0, t2_delta = 0.05, t2_gamma = 5.0;
  std::uint64_t t2_seed = 0;
  std::string t2_out;
  thm2->add_option("--trials", t2_trials);
  thm2->add_option("--n", t2_n);
  thm2->add_option("--classes", t2_classes);
  thm2->add_option("--bins", t2_bins);
  thm2->add_option("--min-bin", t2_min_bin);
  thm2->add_option("--eps", t2_eps);
  thm2->add_option("--delta", t2_delta);
  thm2->add_option("--gamma", t2_gamma);
  thm2->add_option("--seed", t2_seed);
  thm2->add_option("--out", t2_out, "json-lines output (default stdout)");

  auto* thm3 = verify->add_subcommand("thm3", "LCE bias-variance bound");
  std::string t3_data, t3_out, t3_sweep;
  double t3_delta = 0.05, t3_gamma = 10.0, t3_eps = -1.0;
  std::size_t t3_bins = 15, t3_min_bin = 20;
  thm3->add_option("--data", t3_data, "dataset (probabilities from its logits)")->required();
  thm3->add_option("--delta", t3_delta);
  thm3->add_option("--gamma", t3_gamma);
  thm3->add_option("--bins", t3_bins);
  thm3->add_option("--min-bin", t3_min_bin);
  thm3->add_option("--eps", t3_eps, "tolerance; negative = estimate from the data");
  thm3->add_option("--sweep", t3_sweep, "comma list of bandwidths to sweep");
  thm3->add_option("--out", t3_out);

  auto* thm5 = verify->add_subcommand("thm5", "proximity-bias decomposition");
  std::string t5_data, t5_out;
  double t5_delta = 0.05, t5_gamma = 10.0, t5_eps = -1.0;
  std::size_t t5_k = 5, t5_bins = 15;
  thm5->add_option("--data", t5_data)->required();
  thm5->add_option("--k", t5_k, "nearest neighbors for the proximity score");
  thm5->add_option("--delta", t5_delta);
  thm5->add_option("--gamma", t5_gamma, "bandwidth for the tolerance estimate");
  thm5->add_option("--eps", t5_eps, "tolerance; negative = estimate on the dense half");
  thm5->add_option("--bins", t5_bins);
  thm5->add_option("--out", t5_out);

  auto* jsd = verify->add_subcommand("jsd", "alignment-term consistency trend");
  std::string jsd_sizes = "500,2000,8000", jsd_out;
  std::size_t jsd_seeds = 5;
  std::uint64_t jsd_seed = 0;
  double jsd_tcorrupt = 2.0;
  jsd->add_option("--sizes", jsd_sizes, "comma list of sample sizes");
  jsd->add_option("--seeds", jsd_seeds, "seed repetitions");
  jsd->add_option("--seed", jsd_seed);
  jsd->add_option("--t-corrupt", jsd_tcorrupt);
  jsd->add_option("--out", jsd_out);

  auto* toy = verify->add_subcommand("toy", "six-region recalibration example");
  std::string toy_sizes = "400,400,400,400,400,400", toy_out;
  toy->add_option("--sizes", toy_sizes, "region sizes a,b,c,d,e,f");
  toy->add_option("--out", toy_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int raw = app.exit(e);  // prints the usage message
    return raw == 0 ? 0 : 1;
  }

  if (const char* env = std::getenv("LCAL_THREADS")) threads = std::atoi(env);
  lcal::set_threads(threads);

  auto emit = [](const std::string& path, const std::string& text) {
    if (path.empty())
      std::cout << text;
    else
      write_file(path, text);
  };
  auto parse_list = [](const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
  };

  if (*synth) {
    Manifest man;
    man.command = "synth";
    lcal::SynthSpec spec = lcal::parse_synth_spec(synth_spec);
    if (synth_seed >= 0) spec.seed = static_cast<std::uint64_t>(synth_seed);
    man.config = {{"spec", synth_spec}, {"seed", spec.seed}, {"threads", threads}};
    man.inputs = {synth_spec};
    man.outputs = {synth_out};
    lcal::SynthResult res = lcal::generate(spec);
    lcal::save_dataset(res.dataset, synth_out, format_of(synth_out));
    man.write();
    return 0;
  }

  if (*fit) {
    Manifest man;
    man.command = "fit";
    man.config = {{"method", fit_method}, {"cal", fit_cal},       {"val_frac", fit_val_frac},
                  {"seed", fit_seed},     {"gamma", fit_gamma},   {"lambda", fit_lambda},
                  {"hidden", fit_hidden}, {"epochs", fit_epochs}, {"batch", fit_batch},
                  {"lr", fit_lr},         {"dropout", fit_dropout}, {"threads", threads}};
    man.inputs = {fit_cal};
    man.outputs = {fit_out};
    lcal::CalibrationDataset cal = lcal::load_dataset(fit_cal, format_of(fit_cal));
    std::string json;
    if (fit_method == "lcn") {
      lcal::LcnConfig cfg;
      cfg.hidden_dim = fit_hidden;
      cfg.dropout_rate = fit_dropout;
      cfg.lambda = fit_lambda;
      cfg.gamma = fit_gamma;
      cfg.lr = fit_lr;
      cfg.epochs = fit_epochs;
      cfg.batch_size = fit_batch;
      cfg.val_fraction = fit_val_frac;
      cfg.seed = fit_seed;
      auto [model, trace] = lcal::train_lcn(cal, cfg);
      std::ostringstream fp;
      fp << "lcn;hidden=" << fit_hidden << ";gamma=" << fit_gamma << ";lambda=" << fit_lambda
         << ";epochs=" << fit_epochs << ";batch=" << fit_batch << ";seed=" << fit_seed;
      json = model.to_json(fp.str());
      for (std::size_t e = 0; e < trace.total.size(); ++e)
        std::cerr << "epoch " << e + 1 << " total " << trace.total[e] << " align "
                  << trace.alignment[e] << " sim " << trace.similarity[e] << " val "
                  << trace.val_total[e] << " val_lce " << trace.val_lce_proxy[e] << "\n";
    } else {
      lcal::Calibrator cal_model;
      if (fit_method == "ts") cal_model = lcal::fit_temperature(cal);
      else if (fit_method == "platt") cal_model = lcal::fit_platt(cal);
      else if (fit_method == "isotonic") cal_model = lcal::fit_isotonic(cal);
      else if (fit_method == "dirichlet")
        cal_model = lcal::fit_dirichlet(cal, lcal::FitConfig{fit_val_frac, fit_seed, 2000, 1e-2});
      else
        throw CLI::ValidationError("--method", "unknown method '" + fit_method + "'");
      json = cal_model.to_json();
    }
    write_file(fit_out, json + "\n");
    man.write();
    return 0;
  }

  if (*apply) {
    Manifest man;
    man.command = "apply";
    man.config = {{"model", apply_model}, {"data", apply_data}, {"threads", threads}};
    man.inputs = {apply_model, apply_data};
    man.outputs = {apply_out};
    lcal::CalibrationDataset d = lcal::load_dataset(apply_data, format_of(apply_data));
    nlohmann::json mj = nlohmann::json::parse(read_file(apply_model));
    lcal::CalibrationDataset out;
    if (mj.value("method", "") == "lcn") {
      lcal::LcnModel model = lcal::LcnModel::from_json(mj.dump());
      out = lcal::lcn_transform(model, d);
    } else {
      lcal::Calibrator cal = lcal::Calibrator::from_json(mj.dump());
      lcal::ProbabilityMatrix probs = lcal::apply_calibrator(cal, d);
      out = lcal::replace_representation(d, d.features, lcal::logits_from_probs(probs.probs));
    }
    lcal::save_dataset(out, apply_out, format_of(apply_out));
    man.write();
    return 0;
  }

  if (*eval) {
    Manifest man;
    man.command = "eval";
    man.config = {{"data", eval_data},         {"bins", eval_bins},
                  {"gamma", eval_gamma},       {"min_bin", eval_min_bin},
                  {"priors", eval_priors_src}, {"variant", eval_variant},
                  {"include_self", eval_include_self}, {"threads", threads}};
    man.inputs = {eval_data};
    if (!eval_report.empty()) man.outputs = {eval_report};
    lcal::CalibrationDataset d = lcal::load_dataset(eval_data, format_of(eval_data));
    lcal::MetricConfig cfg;
    cfg.ece_scheme = {lcal::BinMode::ClasswiseEqualWidth, eval_bins, 0};
    cfg.lce_scheme = {lcal::BinMode::ClasswiseEqualWidth, eval_bins, eval_min_bin};
    cfg.kernel = {eval_gamma, !eval_include_self};
    cfg.variant = eval_variant == "vector" ? lcal::LceVariant::VectorL1
                                           : lcal::LceVariant::ClasswiseScalar;
    cfg.prior_source = eval_priors_src;
    lcal::ProbabilityMatrix probs = lcal::dataset_probs(d);
    lcal::MetricReport rep = lcal::evaluate_all(d, probs, eval_priors(d, eval_priors_src), cfg);
    emit(eval_report, rep.to_json() + "\n");
    man.write();
    return 0;
  }

  if (*thm2) {
    Manifest man;
    man.command = "verify thm2";
    man.config = {{"trials", t2_trials}, {"n", t2_n},         {"classes", t2_classes},
                  {"bins", t2_bins},     {"eps", t2_eps},     {"delta", t2_delta},
                  {"gamma", t2_gamma},   {"seed", t2_seed},   {"min_bin", t2_min_bin},
                  {"threads", threads}};
    if (!t2_out.empty()) man.outputs = {t2_out};
    lcal::Thm2Params p;
    p.trials = t2_trials;
    p.n = t2_n;
    p.n_classes = t2_classes;
    p.m_bins = t2_bins;
    p.eps = t2_eps;
    p.delta = t2_delta;
    p.seed = t2_seed;
    p.gamma = t2_gamma;
    p.min_bin_size = t2_min_bin;
    std::vector<lcal::BoundReport> reports = lcal::verify_theorem2(p);
    std::ostringstream os;
    std::size_t held = 0;
    for (const auto& r : reports) {
      os << r.to_json() << "\n";
      held += r.holds ? 1 : 0;
    }
    emit(t2_out, os.str());
    std::cerr << "thm2: " << held << "/" << reports.size() << " trials hold\n";
    man.write();
    return 0;
  }

  if (*thm3) {
    Manifest man;
    man.command = "verify thm3";
    man.config = {{"data", t3_data},   {"delta", t3_delta},     {"gamma", t3_gamma},
                  {"bins", t3_bins},   {"min_bin", t3_min_bin}, {"eps", t3_eps},
                  {"sweep", t3_sweep}, {"threads", threads}};
    man.inputs = {t3_data};
    if (!t3_out.empty()) man.outputs = {t3_out};
    lcal::CalibrationDataset d = lcal::load_dataset(t3_data, format_of(t3_data));
    lcal::ProbabilityMatrix probs = lcal::dataset_probs(d);
    lcal::BinningScheme scheme{lcal::BinMode::ClasswiseEqualWidth, t3_bins, t3_min_bin};
    std::optional<double> eps;
    if (t3_eps >= 0.0) eps = t3_eps;
    std::vector<double> gammas = t3_sweep.empty() ? std::vector<double>{t3_gamma}
                                                  : parse_list(t3_sweep);
    std::ostringstream os;
    for (double g : gammas) {
      lcal::BoundReport r =
          lcal::verify_theorem3(d, probs, eps, scheme, lcal::KernelConfig{g, true}, t3_delta);
      os << r.to_json() << "\n";
    }
    emit(t3_out, os.str());
    man.write();
    return 0;
  }

  if (*thm5) {
    Manifest man;
    man.command = "verify thm5";
    man.config = {{"data", t5_data}, {"k", t5_k},     {"delta", t5_delta}, {"gamma", t5_gamma},
                  {"eps", t5_eps},   {"bins", t5_bins}, {"threads", threads}};
    man.inputs = {t5_data};
    if (!t5_out.empty()) man.outputs = {t5_out};
    lcal::CalibrationDataset d = lcal::load_dataset(t5_data, format_of(t5_data));
    lcal::ProbabilityMatrix probs = lcal::dataset_probs(d);
    double eps = t5_eps;
    if (eps < 0.0)
      eps = lcal::estimate_local_eps_dense(d, probs, lcal::KernelConfig{t5_gamma, true}, t5_k);
    lcal::ProximityReport rep = lcal::verify_theorem5(
        d, probs, eps, t5_k, t5_delta, lcal::BinningScheme{lcal::BinMode::ClasswiseEqualWidth,
                                                           t5_bins, 0});
    emit(t5_out, rep.to_json() + "\n");
    man.write();
    return 0;
  }

  if (*jsd) {
    Manifest man;
    man.command = "verify jsd";
    man.config = {{"sizes", jsd_sizes}, {"seeds", jsd_seeds}, {"seed", jsd_seed},
                  {"t_corrupt", jsd_tcorrupt}, {"threads", threads}};
    if (!jsd_out.empty()) man.outputs = {jsd_out};
    std::vector<std::size_t> sizes;
    for (double v : parse_list(jsd_sizes)) sizes.push_back(static_cast<std::size_t>(v));
    lcal::SynthSpec gen;
    gen.kind = lcal::SynthKind::TemperatureCorrupted;
    gen.n_classes = 2;
    gen.n_features = 2;
    gen.sigma = 10.0;
    gen.mean_scale = 12.0;
    gen.t_corrupt = jsd_tcorrupt;
    std::ostringstream os;
    for (std::size_t s = 0; s < jsd_seeds; ++s) {
      gen.seed = jsd_seed + s;
      for (const lcal::JsdConsistencyRow& row : lcal::jsd_consistency_experiment(gen, sizes))
        os << "{\"seed\":" << gen.seed << ",\"n\":" << row.n
           << ",\"gamma\":" << lcal::format_sig(row.bandwidth, 12)
           << ",\"jsd_est\":" << lcal::format_sig(row.mean_jsd_estimate, 12)
           << ",\"jsd_true\":" << lcal::format_sig(row.mean_jsd_true, 12)
           << ",\"gap\":" << lcal::format_sig(row.gap, 12) << "}\n";
    }
    emit(jsd_out, os.str());
    man.write();
    return 0;
  }

  if (*toy) {
    Manifest man;
    man.command = "verify toy";
    man.config = {{"sizes", toy_sizes}, {"threads", threads}};
    if (!toy_out.empty()) man.outputs = {toy_out};
    std::vector<std::size_t> sizes;
    for (double v : parse_list(toy_sizes)) sizes.push_back(static_cast<std::size_t>(v));
    lcal::ToyReport rep = lcal::toy_example(sizes);
    emit(toy_out, rep.to_json() + "\n");
    if (!toy_out.empty()) std::cout << "p_cal = " << lcal::format_sig(rep.p_cal_focus, 15) << "\n";
    man.write();
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const lcal::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case lcal::Err::MagicMismatch:
      case lcal::Err::TruncatedFile:
      case lcal::Err::LabelOutOfRange:
      case lcal::Err::NonFiniteValue:
      case lcal::Err::IoFailure:
      case lcal::Err::RejectedEmptyDataset:
      case lcal::Err::FractionSumInvalid:
      case lcal::Err::ShapeMismatch:
      case lcal::Err::DimensionMismatch:
      case lcal::Err::ClassCountMismatch:
      case lcal::Err::SpecInvalid:
      case lcal::Err::EmptyInput:
      case lcal::Err::KTooLarge:
        return 2;
      default:
        return 3;  // numerical failure
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
