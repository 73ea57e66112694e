// heatlens: spectral heat-diffusion image operators, frequency masking,
// desk-scale self-supervised pretraining and complexity benchmarks.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "heatlens/bench.hpp"
#include "heatlens/gradcheck.hpp"
#include "heatlens/image_io.hpp"
#include "heatlens/train.hpp"

namespace hl = heatlens;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  std::string dtype;  // "", "f32" or "f64"
  std::string config_path;
};

hl::ConfigView load_config(const GlobalOpts& g) {
  if (g.config_path.empty()) return hl::ConfigView(hl::ConfigMap{});
  return hl::ConfigView(hl::parse_config_file(g.config_path));
}

void parse4(const std::string& s, std::array<std::size_t, 4>& out, const char* what) {
  std::istringstream is(s);
  std::string tok;
  for (auto& d : out) {
    if (!std::getline(is, tok, ','))
      throw std::runtime_error(std::string("expected 4 comma-separated values for ") + what);
    d = static_cast<std::size_t>(std::stoull(tok));
  }
}

std::vector<std::size_t> parse_sides(const std::string& s) {
  std::vector<std::size_t> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(static_cast<std::size_t>(std::stoull(tok)));
  if (out.empty()) throw std::runtime_error("empty --sides list");
  return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const GlobalOpts& g, int count, std::size_t size, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    auto pair = hl::synth_pair<double>(hl::rng::derive_seed(g.seed, i), size);
    hl::write_netpbm_file(out_dir + "/pair_" + std::to_string(i) + "_opt.ppm",
                          hl::tensor_to_image(pair.optical));
    hl::write_netpbm_file(out_dir + "/pair_" + std::to_string(i) + "_sar.pgm",
                          hl::tensor_to_image(pair.sar));
  }
  std::cerr << "wrote " << 2 * count << " files to " << out_dir << "\n";
  return 0;
}

int cmd_mask(const GlobalOpts& g, const std::string& in_path, double rate,
             const std::string& out_dir, bool dump_tensors) {
  std::filesystem::create_directories(out_dir);
  auto img = hl::read_netpbm_file(in_path);
  auto x = hl::image_to_tensor<double>(img);
  auto plan = hl::SpectralPlan<double>::make(x.shape()[1], x.shape()[2]);
  const hl::MaskSpec spec =
      rate >= 0.0 ? hl::mask_for_rate(plan.rows(), plan.cols(), rate, g.seed)
                  : hl::sample_mask(plan.rows(), plan.cols(), g.seed);
  auto [low, high] = hl::split_frequency(plan, x, spec);

  double recomb_err = 0.0;
  std::size_t clamped_low = 0, clamped_high = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    recomb_err = std::max(recomb_err, std::abs(low[i] + high[i] - x[i]));
    if (low[i] < 0.0 || low[i] > 1.0) ++clamped_low;
    if (high[i] < 0.0 || high[i] > 1.0) ++clamped_high;
  }

  const std::string stem = out_dir + "/component";
  const char* ext = img.channels == 1 ? ".pgm" : ".ppm";
  hl::write_netpbm_file(stem + "_low" + ext, hl::tensor_to_image(low));
  hl::write_netpbm_file(stem + "_high" + ext, hl::tensor_to_image(high));
  if (dump_tensors) {
    std::ofstream fl(stem + "_low.rsvh", std::ios::binary);
    hl::write_rsvh(fl, low);
    std::ofstream fh(stem + "_high.rsvh", std::ios::binary);
    hl::write_rsvh(fh, high);
  }
  std::ofstream side(out_dir + "/maskspec.txt");
  side << "target_rate = " << spec.target_rate << "\n"
       << "realized_radius = " << spec.realized_radius << "\n"
       << "realized_rate = " << spec.realized_rate << "\n"
       << "seed = " << spec.seed << "\n"
       << "recombination_max_abs_err = " << recomb_err << "\n"
       << "clamped_low_pixels = " << clamped_low << "\n"
       << "clamped_high_pixels = " << clamped_high << "\n";
  std::cerr << "mask: realized rate " << spec.realized_rate << " radius " << spec.realized_radius
            << "\n";
  return 0;
}

int cmd_hco(const std::string& in_path, double k, double t, const std::string& out_path) {
  if (k < 0 || t < 0) throw std::runtime_error("hco: k and t must be >= 0");
  auto img = hl::read_netpbm_file(in_path);
  auto x = hl::image_to_tensor<double>(img);
  auto plan = hl::SpectralPlan<double>::make(x.shape()[1], x.shape()[2]);
  auto out = hl::hco_apply(plan, x, k, t);
  hl::write_netpbm_file(out_path, hl::tensor_to_image(out));
  return 0;
}

int cmd_gradcheck(const GlobalOpts& g, const std::string& scope, const std::string& corrupt) {
  hl::GradCheckReport report;
  if (scope == "ops") {
    report = hl::gradcheck_ops(g.seed ? g.seed : 7, corrupt);
  } else if (scope == "block") {
    report = hl::gradcheck_block(g.seed ? g.seed : 7);
  } else if (scope == "model") {
    hl::ModelConfig cfg;
    report = hl::gradcheck_model(g.seed ? g.seed : 7, cfg);
  } else {
    throw std::runtime_error("gradcheck: scope must be ops, block or model");
  }
  for (const auto& e : report.entries)
    std::cout << (e.pass ? "pass " : "FAIL ") << e.name << " rel_err " << e.max_rel_err << "\n";
  std::cout << "worst rel_err " << report.worst << " (tol " << hl::kGradCheckTol << ")\n";
  return report.all_pass ? 0 : 1;
}

template <typename T>
int run_pretrain(const GlobalOpts& g, hl::ConfigView cfg, long steps, const std::string& out_dir,
                 const std::string& resume, int batch, bool verbose) {
  hl::ModelConfig mc;
  const std::size_t image = static_cast<std::size_t>(cfg.take_long("image_size", 64));
  mc.image_h = mc.image_w = image;
  mc.patch_size = static_cast<std::size_t>(cfg.take_long("patch_size", 4));
  parse4(cfg.take_str("depths", "1,1,2,1"), mc.stage_depths, "depths");
  parse4(cfg.take_str("widths", "16,32,64,128"), mc.stage_widths, "widths");
  mc.loss.sdr = cfg.take_bool("loss.sdr", true);
  mc.loss.fdr = cfg.take_bool("loss.fdr", true);
  mc.loss.cl = cfg.take_bool("loss.cl", true);
  hl::ScheduleConfig sched;
  sched.base_lr = cfg.take_double("base_lr", sched.base_lr);
  sched.warmup_start_lr = cfg.take_double("warmup_start_lr", sched.warmup_start_lr);
  sched.min_lr = cfg.take_double("min_lr", sched.min_lr);
  sched.warmup_epochs = cfg.take_double("warmup_epochs", sched.warmup_epochs);
  sched.total_epochs = cfg.take_double("total_epochs", sched.total_epochs);
  hl::PretrainOptions opts;
  opts.total_steps = cfg.take_long("steps", 200);
  opts.batch_size = cfg.take_long("batch_size", 8);
  opts.seed = cfg.take_u64("seed", 42);
  opts.checkpoint_every = cfg.take_long("checkpoint_every", 0);
  const double wd = cfg.take_double("weight_decay", 0.05);
  cfg.expect_empty();
  if (steps > 0) opts.total_steps = steps;
  if (batch > 0) opts.batch_size = batch;
  if (g.seed) opts.seed = g.seed;
  opts.out_dir = out_dir;
  opts.verbose = verbose;

  std::ofstream csv;
  std::ostream* csv_out = nullptr;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    csv.open(out_dir + "/metrics.csv", resume.empty() ? std::ios::trunc : std::ios::app);
    if (resume.empty()) csv << hl::kMetricsCsvHeader << "\n";
    csv_out = &csv;
  } else {
    std::cout << hl::kMetricsCsvHeader << "\n";
    csv_out = &std::cout;
  }

  if (!resume.empty()) {
    auto st = hl::load_checkpoint<T>(resume);
    if (steps > 0) st.total_steps = steps;
    hl::pretrain_continue(st, opts, csv_out);
    std::cerr << "resumed to step " << st.step << ", final loss "
              << st.loss_history.back().total << "\n";
    return 0;
  }
  hl::TrainState<T> st;
  st.cfg = mc;
  st.schedule = sched;
  st.adamw.weight_decay = wd;
  st.total_steps = opts.total_steps;
  st.seed = opts.seed;
  hl::pretrain_continue(st, opts, csv_out);
  std::cerr << "trained " << st.step << " steps, final loss " << st.loss_history.back().total
            << "\n";
  return 0;
}

int cmd_bench(const GlobalOpts& g, const std::string& mode, const std::string& sides_str,
              std::size_t channels, std::size_t depth, const std::string& out_path) {
  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!out_path.empty()) {
    file.open(out_path);
    out = &file;
  }
  if (mode == "flops") {
    auto sides = parse_sides(sides_str.empty() ? "32,64,128,256,512,1024" : sides_str);
    (*out) << "# flop convention: " << hl::FlopsReport::kConvention << "\n";
    (*out) << "# token grid = side, N = side^2 tokens; matmul DCT path\n";
    (*out) << "side,tokens,hco_flops,attention_flops\n";
    for (auto s : sides)
      (*out) << s << "," << s * s << "," << hl::flops_hco_stage(s, channels, depth).total() << ","
             << hl::flops_attention_stage(s, channels, depth).total() << "\n";
    const double eh = hl::hco_flops_exponent(sides, channels, depth);
    const double ea = hl::attention_flops_exponent(sides, channels, depth);
    const std::size_t cross = hl::flops_crossover_side(channels, depth, 4096);
    std::cerr << "fitted exponent vs tokens: hco " << eh << ", attention " << ea << "\n";
    std::cerr << "crossover token side (hco cheaper beyond): " << cross << "\n";
    return 0;
  }
  if (mode == "throughput") {
    auto sides = parse_sides(sides_str.empty() ? "64,128,256" : sides_str);
    hl::BenchEncoderConfig cfg;
    cfg.channels = channels;
    cfg.depth = depth;
    (*out) << "# single-threaded CPU, forward only, median of 5 (1 warmup discarded)\n";
    (*out) << "# image side; tokens = (side/" << cfg.patch << ")^2\n";
    (*out) << "side,tokens,hco_images_per_sec,attention_images_per_sec,hco_flops,attention_flops\n";
    for (const auto& row : hl::throughput_scan(sides, cfg, 5, g.seed ? g.seed : 1)) {
      if (!row.measurable) {
        (*out) << row.side << ",unmeasurable,,,,\n";
        continue;
      }
      (*out) << row.side << "," << row.tokens << "," << row.hco_images_per_sec << ","
             << row.attention_images_per_sec << "," << row.hco_flops << ","
             << row.attention_flops << "\n";
    }
    return 0;
  }
  if (mode == "oracle") {
    // fixed instance: spectral route vs Euler stepping at two dt values
    const std::size_t m = 16;
    hl::rng::Xoshiro256pp r(g.seed ? g.seed : 3);
    std::vector<double> v(m * m);
    for (auto& e : v) e = r.uniform(-1, 1);
    hl::Tensor<double> u0({m, m}, std::move(v));
    auto plan = hl::SpectralPlan<double>::make(m, m);
    auto spectral = hl::hco_apply(plan, u0, 0.5, 0.1);
    (*out) << "dt,rel_l2_vs_spectral\n";
    for (double dt : {1e-4, 5e-5}) {
      auto fd = hl::heat_fd_oracle(u0, 0.5, 0.1, dt);
      double num = 0, den = 0;
      for (std::size_t i = 0; i < fd.size(); ++i) {
        num += (spectral[i] - fd[i]) * (spectral[i] - fd[i]);
        den += fd[i] * fd[i];
      }
      (*out) << dt << "," << std::sqrt(num / den) << "\n";
    }
    return 0;
  }
  throw std::runtime_error("bench: mode must be flops, throughput or oracle");
}

template <typename T>
int dump_image(const std::string& in_path, const std::string& out_path) {
  auto img = hl::read_netpbm_file(in_path);
  auto t = hl::image_to_tensor<T>(img);
  std::ofstream f(out_path, std::ios::binary);
  if (!f) throw std::runtime_error("dump: cannot open " + out_path);
  hl::write_rsvh(f, t);
  return 0;
}

int cmd_load(const std::string& in_path, const std::string& out_path, bool info) {
  std::ifstream f(in_path, std::ios::binary);
  if (!f) throw std::runtime_error("load: cannot open " + in_path);
  const auto header = hl::read_rsvh_header(f);
  if (info || out_path.empty()) {
    std::cout << "dtype " << (header.dtype == 0 ? "f32" : "f64") << " shape "
              << hl::shape_str(header.shape) << "\n";
    if (out_path.empty()) return 0;
  }
  f.seekg(0);
  if (header.dtype == 0) {
    auto t = hl::read_rsvh<float>(f);
    hl::write_netpbm_file(out_path, hl::tensor_to_image(t));
  } else {
    auto t = hl::read_rsvh<double>(f);
    hl::write_netpbm_file(out_path, hl::tensor_to_image(t));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heatlens: DCT heat-conduction operators, frequency masking, pretraining"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--seed", g.seed, "base RNG seed");
  app.add_option("--dtype", g.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--config", g.config_path, "key = value config file");

  auto* synth = app.add_subcommand("synth", "write synthetic optical/SAR pairs");
  int synth_count = 1;
  std::size_t synth_size = 64;
  std::string synth_out = "synth_out";
  synth->add_option("--count", synth_count);
  synth->add_option("--size", synth_size);
  synth->add_option("--out", synth_out);

  auto* mask = app.add_subcommand("mask", "frequency-split an image into low/high components");
  std::string mask_in, mask_out = "mask_out";
  double mask_rate = -1.0;
  bool mask_dump = false;
  mask->add_option("--in", mask_in)->required();
  mask->add_option("--out", mask_out);
  mask->add_option("--rate", mask_rate, "force the high-frequency fraction (default: sample)");
  mask->add_flag("--dump-tensors", mask_dump, "also write exact RSVH component dumps");

  auto* hco = app.add_subcommand("hco", "apply the scalar-diffusivity heat operator");
  std::string hco_in, hco_out = "hco_out.ppm";
  double hco_k = 1.0, hco_t = 1.0;
  hco->add_option("--in", hco_in)->required();
  hco->add_option("--out", hco_out);
  hco->add_option("--k", hco_k);
  hco->add_option("--t", hco_t);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_scope = "ops", gc_corrupt;
  gc->add_option("--scope", gc_scope)->check(CLI::IsMember({"ops", "block", "model"}));
  gc->add_option("--corrupt-op", gc_corrupt,
                 "test hook: corrupt the named op's gradient to verify detection");

  auto* pre = app.add_subcommand("pretrain", "desk-scale self-supervised pretraining");
  long pre_steps = 0;
  int pre_batch = 0;
  bool pre_verbose = false;
  std::string pre_out, pre_resume;
  pre->add_option("--steps", pre_steps);
  pre->add_option("--batch", pre_batch);
  pre->add_option("--out", pre_out);
  pre->add_option("--resume", pre_resume, "checkpoint to continue from");
  pre->add_flag("--verbose", pre_verbose);

  auto* bench = app.add_subcommand("bench", "complexity and throughput benchmarks");
  std::string bench_mode = "flops", bench_sides, bench_out;
  std::size_t bench_channels = 8, bench_depth = 2;
  bench->add_option("--mode", bench_mode)
      ->check(CLI::IsMember({"flops", "throughput", "oracle"}));
  bench->add_option("--sides", bench_sides, "comma-separated side list");
  bench->add_option("--channels", bench_channels);
  bench->add_option("--depth", bench_depth);
  bench->add_option("--out", bench_out, "CSV path (default stdout)");

  auto* dump = app.add_subcommand("dump", "image file -> RSVH tensor dump");
  std::string dump_in, dump_out = "out.rsvh";
  dump->add_option("--in", dump_in)->required();
  dump->add_option("--out", dump_out);

  auto* load = app.add_subcommand("load", "RSVH tensor dump -> image file (or header info)");
  std::string load_in, load_out;
  bool load_info = false;
  load->add_option("--in", load_in)->required();
  load->add_option("--out", load_out);
  load->add_flag("--info", load_info);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(g, synth_count, synth_size, synth_out);
    if (*mask) return cmd_mask(g, mask_in, mask_rate, mask_out, mask_dump);
    if (*hco) return cmd_hco(hco_in, hco_k, hco_t, hco_out);
    if (*gc) return cmd_gradcheck(g, gc_scope, gc_corrupt);
    if (*pre) {
      // training defaults to f32, switchable for verification runs
      const bool f64 = g.dtype == "f64";
      return f64 ? run_pretrain<double>(g, load_config(g), pre_steps, pre_out, pre_resume,
                                        pre_batch, pre_verbose)
                 : run_pretrain<float>(g, load_config(g), pre_steps, pre_out, pre_resume,
                                       pre_batch, pre_verbose);
    }
    if (*bench) return cmd_bench(g, bench_mode, bench_sides, bench_channels, bench_depth,
                                 bench_out);
    if (*dump) {
      // tensor dumps default to f64
      return g.dtype == "f32" ? dump_image<float>(dump_in, dump_out)
                              : dump_image<double>(dump_in, dump_out);
    }
    if (*load) return cmd_load(load_in, load_out, load_info);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
