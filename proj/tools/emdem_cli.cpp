// emdem: EM demosaicing toolkit command line.
//
// Subcommands: mosaic, demosaic, toy1d, evaluate, train-d, bench.
// All errors exit nonzero with a one-line diagnostic on stderr.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "emdem/core.hpp"
#include "emdem/io.hpp"
#include "emdem/metrics.hpp"
#include "emdem/pipeline.hpp"
#include "emdem/training.hpp"

namespace fs = std::filesystem;
using namespace emdem;

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

std::vector<double> parse_real_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  if (out.empty()) throw std::runtime_error("empty list: " + csv);
  return out;
}

std::vector<std::string> parse_string_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

EmConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return EmConfig{};
  return read_config(path);
}

RegressionTree resolve_tree(const std::string& tree_flag, EmConfig& cfg) {
  if (!tree_flag.empty()) return read_tree(tree_flag);
  if (!cfg.tree_path.empty()) return read_tree(cfg.tree_path);
  if (cfg.constant_d > 0.0) return RegressionTree::single_leaf(1.0);  // unused
  throw std::runtime_error(
      "no tree given: pass --tree, or set `tree` or `constant_d` in the config");
}

// ---------------------------------------------------------------- toy1d --

struct Segment {
  int length = 0;
  double theta = 0.0;
};

std::vector<Segment> parse_segments(const std::string& s, int n,
                                    std::uint64_t seed) {
  std::vector<Segment> segs;
  if (s.find(':') == std::string::npos) {
    // Integer count: equal-length segments, angles drawn from the seed
    // with a minimum separation between neighbors.
    const int count = std::stoi(s);
    if (count < 1) throw std::runtime_error("--segments: count < 1");
    std::mt19937_64 rng(seed ^ 0x5eedu);
    std::uniform_real_distribution<double> uni(0.12, std::numbers::pi / 2 - 0.12);
    double prev = -10.0;
    for (int i = 0; i < count; ++i) {
      double th = uni(rng);
      for (int tries = 0; tries < 64 && std::abs(th - prev) < 0.3; ++tries) {
        th = uni(rng);
      }
      prev = th;
      Segment sg;
      sg.length = n / count + ((i < n % count) ? 1 : 0);
      sg.theta = th;
      segs.push_back(sg);
    }
    return segs;
  }
  int total = 0;
  for (const std::string& part : parse_string_list(s)) {
    const auto colon = part.find(':');
    if (colon == std::string::npos) {
      throw std::runtime_error("--segments: expected len:theta pairs");
    }
    Segment sg;
    sg.length = std::stoi(part.substr(0, colon));
    sg.theta = std::stod(part.substr(colon + 1));
    if (sg.length < 1 || sg.theta < 0.0 || sg.theta > std::numbers::pi / 2) {
      throw std::runtime_error("--segments: bad segment " + part);
    }
    segs.push_back(sg);
    total += sg.length;
  }
  if (total != n) {
    throw std::runtime_error("--segments: lengths must sum to --n");
  }
  return segs;
}

// Brightness profile with structure at several scales, kept well above
// zero so the polar representation stays meaningful.
std::vector<double> textured_profile(int n, std::uint64_t seed) {
  std::vector<double> l(static_cast<std::size_t>(n));
  GaussianNoise jitter(seed ^ 0x70f11eull);
  for (int j = 0; j < n; ++j) {
    double v = 150.0 + 55.0 * std::sin(2.0 * std::numbers::pi * j / 16.7) +
               25.0 * std::sin(2.0 * std::numbers::pi * j / 4.9 + 1.3) +
               8.0 * jitter();
    l[static_cast<std::size_t>(j)] = std::max(v, 5.0);
  }
  return l;
}

int run_toy1d(const std::string& mode, int n, double sigma,
              const std::string& segments, std::uint64_t seed,
              const std::string& report) {
  CsvTable table;
  if (mode == "constant") {
    std::vector<double> l = balance_profile(textured_profile(n, seed));
    for (double& v : l) v = std::max(v, 0.0);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.15,
                                               std::numbers::pi / 2 - 0.15);
    const double theta_true = uni(rng);
    RgbImage truth(n, 1);
    for (int j = 0; j < n; ++j) {
      truth.g.at(j, 0) = l[static_cast<std::size_t>(j)] * std::cos(theta_true);
      truth.r.at(j, 0) = l[static_cast<std::size_t>(j)] * std::sin(theta_true);
    }
    const MosaicFrame frame = mosaic_sample_1d(truth, sigma, seed);

    EmConfig cfg;
    cfg.sigma = (sigma > 0.0) ? sigma : 1e-4 * 255.0;
    cfg.estep = EstepKind::Kalman;
    cfg.max_em_iters = 100;
    cfg.angle_tol = 1e-7;
    const Constant1dResult res = em_constant(frame, cfg);
    const double closed = closed_form_constant(frame);

    table.header = {"mode", "n",        "sigma",      "seed",
                    "theta_true", "theta_closed", "theta_ml", "abs_err",
                    "iterations", "converged"};
    table.rows.push_back({"constant", std::to_string(n), fmt(sigma),
                          std::to_string(seed), fmt(theta_true), fmt(closed),
                          fmt(res.theta_ml), fmt(std::abs(res.theta_ml - theta_true)),
                          std::to_string(res.iterations),
                          res.converged ? "1" : "0"});
  } else if (mode == "piecewise") {
    const auto segs = parse_segments(segments, n, seed);
    const std::vector<double> l = textured_profile(n, seed);
    std::vector<double> theta_true(static_cast<std::size_t>(n));
    {
      int pos = 0;
      for (const Segment& sg : segs) {
        for (int j = 0; j < sg.length; ++j) {
          theta_true[static_cast<std::size_t>(pos++)] = sg.theta;
        }
      }
    }
    RgbImage truth(n, 1);
    for (int j = 0; j < n; ++j) {
      truth.g.at(j, 0) =
          l[static_cast<std::size_t>(j)] * std::cos(theta_true[static_cast<std::size_t>(j)]);
      truth.r.at(j, 0) =
          l[static_cast<std::size_t>(j)] * std::sin(theta_true[static_cast<std::size_t>(j)]);
    }
    const MosaicFrame frame = mosaic_sample_1d(truth, sigma, seed);

    EmConfig cfg;
    cfg.sigma = (sigma > 0.0) ? sigma : 1e-4 * 255.0;
    cfg.estep = EstepKind::Kalman;
    cfg.max_em_iters = 100;
    cfg.beta.beta0 = 6.0;  // handpicked chain regularizer strength
    const Piecewise1dResult res = em_piecewise_1d(frame, cfg);

    // Interior RMS excludes one site on each side of a segment change.
    std::vector<bool> interior(static_cast<std::size_t>(n), true);
    for (int j = 1; j < n; ++j) {
      if (theta_true[static_cast<std::size_t>(j)] !=
          theta_true[static_cast<std::size_t>(j) - 1]) {
        interior[static_cast<std::size_t>(j)] = false;
        interior[static_cast<std::size_t>(j) - 1] = false;
      }
    }
    double rms_int = 0.0, rms_all = 0.0;
    int n_int = 0;
    for (int j = 0; j < n; ++j) {
      const double e = res.theta[static_cast<std::size_t>(j)] -
                       theta_true[static_cast<std::size_t>(j)];
      rms_all += e * e;
      if (interior[static_cast<std::size_t>(j)]) {
        rms_int += e * e;
        ++n_int;
      }
    }
    rms_all = std::sqrt(rms_all / n);
    rms_int = std::sqrt(rms_int / std::max(n_int, 1));

    table.header = {"mode",      "n",    "sigma", "seed", "segments",
                    "theta_rms_interior", "theta_rms_all", "iterations",
                    "converged"};
    table.rows.push_back({"piecewise", std::to_string(n), fmt(sigma),
                          std::to_string(seed), segments, fmt(rms_int),
                          fmt(rms_all), std::to_string(res.iterations),
                          res.converged ? "1" : "0"});
  } else {
    throw std::runtime_error("--mode must be constant or piecewise");
  }
  write_csv(table, report);
  return 0;
}

// ----------------------------------------------------------------- bench --

int run_bench(const std::string& dataset, const std::string& algos_csv,
              int crop, const std::string& config_path,
              const std::string& tree_flag, const std::string& report) {
  EmConfig cfg = load_config_or_default(config_path);
  const auto algos = parse_string_list(algos_csv);
  for (const std::string& a : algos) {
    if (a != "ours" && a != "bilinear") {
      throw std::runtime_error("unknown algorithm `" + a + "`");
    }
  }
  RegressionTree tree = RegressionTree::single_leaf(1.0);
  if (std::find(algos.begin(), algos.end(), std::string("ours")) !=
      algos.end()) {
    tree = resolve_tree(tree_flag, cfg);
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dataset)) {
    if (entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .ppm files in " + dataset);

  CsvTable table;
  table.header = {"image", "algo", "cpsnr_db", "scielab", "wall_time_s"};
  std::vector<double> tot_psnr(algos.size(), 0.0), tot_sci(algos.size(), 0.0),
      tot_time(algos.size(), 0.0);

  for (const fs::path& file : files) {
    int maxval = 255;
    RgbImage ref = read_image(file, maxval);
    if (crop > 0 && (ref.width > crop || ref.height > crop)) {
      const int cw = std::min(crop, ref.width);
      const int chh = std::min(crop, ref.height);
      const int ox = (ref.width - cw) / 2, oy = (ref.height - chh) / 2;
      RgbImage sub(cw, chh);
      for (int y = 0; y < chh; ++y) {
        for (int x = 0; x < cw; ++x) {
          sub.r.at(x, y) = ref.r.at(x + ox, y + oy);
          sub.g.at(x, y) = ref.g.at(x + ox, y + oy);
          sub.b.at(x, y) = ref.b.at(x + ox, y + oy);
        }
      }
      ref = std::move(sub);
    }
    const double synth_sigma = std::max(cfg.sigma, 0.0);
    MosaicFrame frame =
        mosaic_sample(ref, CfaPattern::from_name("RGGB"), synth_sigma, 0);
    frame.bit_depth = (maxval > 255) ? 16 : 8;
    const double peak = static_cast<double>(maxval);

    for (std::size_t ai = 0; ai < algos.size(); ++ai) {
      const auto t0 = std::chrono::steady_clock::now();
      RgbImage rec = (algos[ai] == "ours") ? em_demosaic(frame, cfg, tree)
                                           : bilinear_demosaic(frame);
      const auto t1 = std::chrono::steady_clock::now();
      const double secs = std::chrono::duration<double>(t1 - t0).count();
      const double psnr = cpsnr(ref, rec, peak);
      const double sci = scielab_approx(ref, rec, 23.0, peak);
      table.rows.push_back({file.stem().string(), algos[ai], fmt(psnr),
                            fmt(sci), fmt(secs)});
      tot_psnr[ai] += psnr;
      tot_sci[ai] += sci;
      tot_time[ai] += secs;
    }
  }
  for (std::size_t ai = 0; ai < algos.size(); ++ai) {
    table.rows.push_back({"TOTAL", algos[ai], fmt(tot_psnr[ai]),
                          fmt(tot_sci[ai]), fmt(tot_time[ai])});
  }
  write_csv(table, report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EM demosaicing toolkit"};
  app.require_subcommand(1);

  // mosaic
  std::string mo_in, mo_pattern = "RGGB", mo_out;
  double mo_sigma = 0.0;
  std::uint64_t mo_seed = 0;
  auto* mosaic_cmd = app.add_subcommand("mosaic", "Sample an image through a CFA");
  mosaic_cmd->add_option("input", mo_in)->required();
  mosaic_cmd->add_option("--pattern", mo_pattern);
  mosaic_cmd->add_option("--sigma", mo_sigma);
  mosaic_cmd->add_option("--seed", mo_seed);
  mosaic_cmd->add_option("--out", mo_out)->required();

  // demosaic
  std::string de_in, de_config, de_tree, de_out, de_manifest;
  auto* demosaic_cmd = app.add_subcommand("demosaic", "Reconstruct RGB from a mosaic");
  demosaic_cmd->add_option("input", de_in)->required();
  demosaic_cmd->add_option("--config", de_config);
  demosaic_cmd->add_option("--tree", de_tree);
  demosaic_cmd->add_option("--out", de_out)->required();
  demosaic_cmd->add_option("--manifest", de_manifest);

  // toy1d
  std::string t_mode = "constant", t_segments = "4", t_report;
  int t_n = 256;
  double t_sigma = 30.0;
  std::uint64_t t_seed = 0;
  auto* toy_cmd = app.add_subcommand("toy1d", "Synthetic chain studies");
  toy_cmd->add_option("--mode", t_mode);
  toy_cmd->add_option("--n", t_n);
  toy_cmd->add_option("--sigma", t_sigma);
  toy_cmd->add_option("--segments", t_segments);
  toy_cmd->add_option("--seed", t_seed);
  toy_cmd->add_option("--report", t_report)->required();

  // evaluate
  std::string ev_ref, ev_test, ev_metrics = "cpsnr,scielab", ev_out;
  double ev_ppd = 23.0;
  auto* eval_cmd = app.add_subcommand("evaluate", "Image quality metrics");
  eval_cmd->add_option("--ref", ev_ref)->required();
  eval_cmd->add_option("--test", ev_test)->required();
  eval_cmd->add_option("--metrics", ev_metrics);
  eval_cmd->add_option("--ppd", ev_ppd);
  eval_cmd->add_option("--out", ev_out)->required();

  // train-d
  std::string tr_patches, tr_candidates = "0.25,0.5,1,1.5,2,3", tr_out;
  int tr_min_leaf = 20, tr_max_depth = 8;
  auto* train_cmd = app.add_subcommand("train-d", "Train the constancy-scale tree");
  train_cmd->add_option("--patches", tr_patches)->required();
  train_cmd->add_option("--candidates", tr_candidates);
  train_cmd->add_option("--min-leaf", tr_min_leaf);
  train_cmd->add_option("--max-depth", tr_max_depth);
  train_cmd->add_option("--out", tr_out)->required();

  // bench
  std::string be_dataset, be_algos = "ours,bilinear", be_config, be_tree,
              be_report;
  int be_crop = 128;
  auto* bench_cmd = app.add_subcommand("bench", "Dataset benchmark");
  bench_cmd->add_option("--dataset", be_dataset)->required();
  bench_cmd->add_option("--algos", be_algos);
  bench_cmd->add_option("--crop", be_crop);
  bench_cmd->add_option("--config", be_config);
  bench_cmd->add_option("--tree", be_tree);
  bench_cmd->add_option("--report", be_report)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (mosaic_cmd->parsed()) {
      int maxval = 255;
      const RgbImage img = read_image(mo_in, maxval);
      MosaicFrame frame =
          mosaic_sample(img, CfaPattern::from_name(mo_pattern), mo_sigma, mo_seed);
      frame.bit_depth = (maxval > 255) ? 16 : 8;
      write_mosaic(frame, mo_out, mo_seed);
      return 0;
    }
    if (demosaic_cmd->parsed()) {
      const MosaicFrame frame = read_mosaic(de_in);
      EmConfig cfg = load_config_or_default(de_config);
      const RegressionTree tree = resolve_tree(de_tree, cfg);
      RunManifest manifest;
      const RgbImage out = em_demosaic(frame, cfg, tree, &manifest);
      write_image(out, de_out, (frame.bit_depth > 8) ? 65535 : 255);
      if (!de_manifest.empty()) write_text_file(manifest.to_text(), de_manifest);
      return 0;
    }
    if (toy_cmd->parsed()) {
      return run_toy1d(t_mode, t_n, t_sigma, t_segments, t_seed, t_report);
    }
    if (eval_cmd->parsed()) {
      int maxval = 255;
      const RgbImage ref = read_image(ev_ref, maxval);
      const RgbImage test = read_image(ev_test);
      const double peak = static_cast<double>(maxval);
      CsvTable table;
      table.header = {"ref", "test"};
      std::vector<std::string> row{ev_ref, ev_test};
      for (const std::string& m : parse_string_list(ev_metrics)) {
        if (m == "cpsnr") {
          table.header.push_back("cpsnr_db");
          row.push_back(fmt(cpsnr(ref, test, peak)));
        } else if (m == "scielab") {
          table.header.push_back("scielab");
          row.push_back(fmt(scielab_approx(ref, test, ev_ppd, peak)));
        } else {
          throw std::runtime_error("unknown metric `" + m + "`");
        }
      }
      table.rows.push_back(std::move(row));
      write_csv(table, ev_out);
      return 0;
    }
    if (train_cmd->parsed()) {
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(tr_patches)) {
        if (entry.path().extension() == ".ppm") files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) {
        throw std::runtime_error("no .ppm patches in " + tr_patches);
      }
      std::vector<RgbImage> patches;
      patches.reserve(files.size());
      for (const fs::path& f : files) patches.push_back(read_image(f));

      EmConfig cfg;  // desk-scale labeling defaults
      cfg.sigma = 0.02 * 255.0;
      cfg.max_em_iters = 4;
      const auto candidates = parse_real_list(tr_candidates);
      const auto samples = label_patches(patches, candidates, cfg, 1);
      const RegressionTree tree = train_tree(samples, tr_min_leaf, tr_max_depth);
      write_tree(tree, tr_out);
      return 0;
    }
    if (bench_cmd->parsed()) {
      return run_bench(be_dataset, be_algos, be_crop, be_config, be_tree,
                       be_report);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
