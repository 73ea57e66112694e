#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "heatlens/config.hpp"
#include "heatlens/model.hpp"
#include "heatlens/optim.hpp"
#include "heatlens/serialize.hpp"
#include "heatlens/synth.hpp"

namespace heatlens {

struct LossRow {
  long step = 0;
  double lr = 0, total = 0, con = 0, spa = 0, fre = 0;
};

inline constexpr const char* kMetricsCsvHeader = "step,lr,l_total,l_con,l_spa,l_fre";

template <typename T>
struct TrainState {
  ModelConfig cfg;
  ScheduleConfig schedule;
  AdamWConfig adamw;
  NamedTensors<T> params;
  NamedTensors<T> adam_m, adam_v;
  long step = 0;   // completed steps
  long total_steps = 0;
  std::uint64_t seed = 0;
  std::vector<LossRow> loss_history;
};

struct PretrainOptions {
  long total_steps = 200;
  int batch_size = 8;
  std::uint64_t seed = 42;
  long checkpoint_every = 0;   // 0 = only at the end (when out_dir set)
  std::string out_dir;         // empty = no files
  bool verbose = false;
};

// ---- checkpoint file: length-prefixed canonical config text, then a named
// tensor table in the RSVH dump format ------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void write_length_prefixed_text(std::ostream& out, const std::string& text) {
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const TrainState<T>& st) {
  ConfigMap cfg;
  cfg["model.depths"] = std::to_string(st.cfg.stage_depths[0]) + "," +
                        std::to_string(st.cfg.stage_depths[1]) + "," +
                        std::to_string(st.cfg.stage_depths[2]) + "," +
                        std::to_string(st.cfg.stage_depths[3]);
  cfg["model.widths"] = std::to_string(st.cfg.stage_widths[0]) + "," +
                        std::to_string(st.cfg.stage_widths[1]) + "," +
                        std::to_string(st.cfg.stage_widths[2]) + "," +
                        std::to_string(st.cfg.stage_widths[3]);
  cfg["model.patch_size"] = std::to_string(st.cfg.patch_size);
  cfg["model.image_h"] = std::to_string(st.cfg.image_h);
  cfg["model.image_w"] = std::to_string(st.cfg.image_w);
  cfg["loss.sdr"] = st.cfg.loss.sdr ? "true" : "false";
  cfg["loss.fdr"] = st.cfg.loss.fdr ? "true" : "false";
  cfg["loss.cl"] = st.cfg.loss.cl ? "true" : "false";
  cfg["schedule.base_lr"] = detail::fmt_double(st.schedule.base_lr);
  cfg["schedule.warmup_start_lr"] = detail::fmt_double(st.schedule.warmup_start_lr);
  cfg["schedule.min_lr"] = detail::fmt_double(st.schedule.min_lr);
  cfg["schedule.warmup_epochs"] = detail::fmt_double(st.schedule.warmup_epochs);
  cfg["schedule.total_epochs"] = detail::fmt_double(st.schedule.total_epochs);
  cfg["adamw.beta1"] = detail::fmt_double(st.adamw.beta1);
  cfg["adamw.beta2"] = detail::fmt_double(st.adamw.beta2);
  cfg["adamw.eps"] = detail::fmt_double(st.adamw.eps);
  cfg["adamw.weight_decay"] = detail::fmt_double(st.adamw.weight_decay);
  cfg["train.step"] = std::to_string(st.step);
  cfg["train.total_steps"] = std::to_string(st.total_steps);
  cfg["train.seed"] = std::to_string(st.seed);
  cfg["dtype"] = DtypeCode<T>::name;
  const std::string text = canonical_config_text(cfg);

  NamedTensors<T> table;
  for (const auto& [k, v] : st.params) table.emplace("p." + k, v);
  for (const auto& [k, v] : st.adam_m) table.emplace("m." + k, v);
  for (const auto& [k, v] : st.adam_v) table.emplace("v." + k, v);
  {
    std::vector<T> hist;
    hist.reserve(st.loss_history.size() * 6);
    for (const auto& row : st.loss_history) {
      hist.push_back(static_cast<T>(row.step));
      hist.push_back(static_cast<T>(row.lr));
      hist.push_back(static_cast<T>(row.total));
      hist.push_back(static_cast<T>(row.con));
      hist.push_back(static_cast<T>(row.spa));
      hist.push_back(static_cast<T>(row.fre));
    }
    table.emplace("__loss_history", Tensor<T>(Shape{st.loss_history.size(), 6}, std::move(hist)));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) fail_value("save_checkpoint", "cannot open " + path + " for writing");
  detail::write_length_prefixed_text(f, text);
  write_tensor_table(f, table);
  if (!f) fail_value("save_checkpoint", "write failed for " + path);
}

template <typename T>
TrainState<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail_value("load_checkpoint", "cannot open " + path);
  const auto len = detail::read_pod<std::uint64_t>(f, "config length");
  std::string text(len, '\0');
  f.read(text.data(), static_cast<std::streamsize>(len));
  if (!f) fail_value("load_checkpoint", "truncated config block");
  std::istringstream ts(text);
  ConfigView cfg(parse_config_text(ts));

  TrainState<T> st;
  const std::string dtype = cfg.take_str("dtype", DtypeCode<T>::name);
  if (dtype != DtypeCode<T>::name)
    fail_value("load_checkpoint", "checkpoint dtype " + dtype + " does not match " +
                                      DtypeCode<T>::name);
  auto parse4 = [](const std::string& s, std::array<std::size_t, 4>& out) {
    std::istringstream is(s);
    std::string tok;
    for (auto& d : out) {
      if (!std::getline(is, tok, ',')) fail_value("load_checkpoint", "bad 4-tuple " + s);
      d = static_cast<std::size_t>(std::stoull(tok));
    }
  };
  parse4(cfg.take_str("model.depths", "1,1,2,1"), st.cfg.stage_depths);
  parse4(cfg.take_str("model.widths", "16,32,64,128"), st.cfg.stage_widths);
  st.cfg.patch_size = static_cast<std::size_t>(cfg.take_long("model.patch_size", 4));
  st.cfg.image_h = static_cast<std::size_t>(cfg.take_long("model.image_h", 64));
  st.cfg.image_w = static_cast<std::size_t>(cfg.take_long("model.image_w", 64));
  st.cfg.loss.sdr = cfg.take_bool("loss.sdr", true);
  st.cfg.loss.fdr = cfg.take_bool("loss.fdr", true);
  st.cfg.loss.cl = cfg.take_bool("loss.cl", true);
  st.schedule.base_lr = cfg.take_double("schedule.base_lr", 2e-4);
  st.schedule.warmup_start_lr = cfg.take_double("schedule.warmup_start_lr", 1e-6);
  st.schedule.min_lr = cfg.take_double("schedule.min_lr", 1e-5);
  st.schedule.warmup_epochs = cfg.take_double("schedule.warmup_epochs", 10);
  st.schedule.total_epochs = cfg.take_double("schedule.total_epochs", 200);
  st.adamw.beta1 = cfg.take_double("adamw.beta1", 0.9);
  st.adamw.beta2 = cfg.take_double("adamw.beta2", 0.999);
  st.adamw.eps = cfg.take_double("adamw.eps", 1e-8);
  st.adamw.weight_decay = cfg.take_double("adamw.weight_decay", 0.05);
  st.step = cfg.take_long("train.step", 0);
  st.total_steps = cfg.take_long("train.total_steps", 0);
  st.seed = cfg.take_u64("train.seed", 0);
  cfg.expect_empty();

  NamedTensors<T> table = read_tensor_table<T>(f);
  for (auto& [k, v] : table) {
    if (k.rfind("p.", 0) == 0)
      st.params.emplace(k.substr(2), v);
    else if (k.rfind("m.", 0) == 0)
      st.adam_m.emplace(k.substr(2), v);
    else if (k.rfind("v.", 0) == 0)
      st.adam_v.emplace(k.substr(2), v);
    else if (k == "__loss_history") {
      const auto& h = v.values();
      for (std::size_t r = 0; r < v.shape()[0]; ++r) {
        LossRow row;
        row.step = static_cast<long>(h[r * 6 + 0]);
        row.lr = static_cast<double>(h[r * 6 + 1]);
        row.total = static_cast<double>(h[r * 6 + 2]);
        row.con = static_cast<double>(h[r * 6 + 3]);
        row.spa = static_cast<double>(h[r * 6 + 4]);
        row.fre = static_cast<double>(h[r * 6 + 5]);
        st.loss_history.push_back(row);
      }
    } else {
      fail_value("load_checkpoint", "unknown table entry '" + k + "'");
    }
  }
  return st;
}

// ---- pretraining loop ------------------------------------------------------

// One training batch is fully determined by (seed, step): item seeds derive
// from the per-step stream, masks from an independent sub-stream, so resumed
// runs replay the exact data order.
template <typename T>
std::vector<std::pair<Tensor<T>, Tensor<T>>> make_batch(std::uint64_t seed, long step,
                                                        int batch_size, std::size_t image) {
  const std::uint64_t batch_seed = rng::derive_seed(seed, 0xBA7C, static_cast<std::uint64_t>(step));
  std::vector<std::pair<Tensor<T>, Tensor<T>>> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    auto pair = synth_pair<T>(rng::derive_seed(batch_seed, static_cast<std::uint64_t>(i)), image);
    out.emplace_back(std::move(pair.optical), std::move(pair.sar));
  }
  return out;
}

inline std::uint64_t mask_seed_for_step(std::uint64_t seed, long step) {
  return rng::derive_seed(seed, 0x3A5C, static_cast<std::uint64_t>(step));
}

// Runs (or resumes) the loop: synth batch -> frequency masking -> four
// encode streams -> decoders -> loss -> backward -> AdamW. Appends one
// LossRow per step; aborts on a non-finite total loss.
template <typename T>
void pretrain_continue(TrainState<T>& st, const PretrainOptions& opts,
                       std::ostream* metrics_csv = nullptr) {
  st.schedule.validate();
  if (st.cfg.image_h != st.cfg.image_w)
    fail_shape("pretrain", "synthetic pairs are square; image_h must equal image_w");
  Model<T> model(st.cfg);
  if (st.params.empty()) st.params = model.init_params(opts.seed);
  if (st.total_steps == 0) st.total_steps = opts.total_steps;
  if (st.seed == 0) st.seed = opts.seed;

  const SpectralPlan<T>& image_plan = model.image_plan();
  namespace fs = std::filesystem;
  if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);

  for (long step = st.step; step < st.total_steps; ++step) {
    const double epoch =
        static_cast<double>(step) * st.schedule.total_epochs / static_cast<double>(st.total_steps);
    const double lr = lr_at(st.schedule, epoch);

    auto batch = make_batch<T>(st.seed, step, opts.batch_size, st.cfg.image_h);
    auto comps = mask_batch(image_plan, batch, mask_seed_for_step(st.seed, step));

    Tape<T> tape;
    NamedTensors<T> tracked;
    for (const auto& [name, t] : st.params) tracked.emplace(name, tape.leaf(t));

    Tensor<T> total, con, spa, fre;
    for (std::size_t i = 0; i < comps.size(); ++i) {
      auto out = model.forward_item(tracked, comps[i], st.cfg.loss);
      auto lb = model.loss_total(out, comps[i], batch[i].first, batch[i].second, st.cfg.loss);
      total = total.defined() ? add(total, lb.total) : lb.total;
      con = con.defined() ? add(con, lb.con) : lb.con;
      spa = spa.defined() ? add(spa, lb.spa) : lb.spa;
      fre = fre.defined() ? add(fre, lb.fre) : lb.fre;
    }
    const T inv_b = T(1) / static_cast<T>(comps.size());
    total = scale(total, inv_b);

    LossRow row;
    row.step = step;
    row.lr = lr;
    row.total = static_cast<double>(total.item());
    row.con = static_cast<double>(con.item()) * static_cast<double>(inv_b);
    row.spa = static_cast<double>(spa.item()) * static_cast<double>(inv_b);
    row.fre = static_cast<double>(fre.item()) * static_cast<double>(inv_b);
    if (!std::isfinite(row.total))
      fail_value("pretrain", "diverged: non-finite loss at step " + std::to_string(step));

    Gradients<T> grads = tape.backward(total);
    NamedTensors<T> gmap;
    for (const auto& [name, t] : tracked) gmap.emplace(name, grads.at(t));
    adamw_step(st.params, gmap, lr, st.adamw, st.adam_m, st.adam_v, step + 1);

    st.step = step + 1;
    st.loss_history.push_back(row);
    if (metrics_csv) {
      (*metrics_csv) << row.step << "," << row.lr << "," << row.total << "," << row.con << ","
                     << row.spa << "," << row.fre << "\n";
    }
    if (opts.verbose) {
      std::ostringstream os;
      os << "step " << row.step << "/" << st.total_steps << " lr " << row.lr << " loss "
         << row.total;
      std::fputs((os.str() + "\n").c_str(), stderr);
    }
    if (!opts.out_dir.empty() && opts.checkpoint_every > 0 &&
        st.step % opts.checkpoint_every == 0)
      save_checkpoint(opts.out_dir + "/checkpoint_" + std::to_string(st.step) + ".ckpt", st);
  }

  if (!opts.out_dir.empty()) save_checkpoint(opts.out_dir + "/checkpoint_final.ckpt", st);
}

template <typename T>
TrainState<T> pretrain(const ModelConfig& cfg, const ScheduleConfig& sched,
                       const PretrainOptions& opts, std::ostream* metrics_csv = nullptr) {
  TrainState<T> st;
  st.cfg = cfg;
  st.schedule = sched;
  st.total_steps = opts.total_steps;
  st.seed = opts.seed;
  pretrain_continue(st, opts, metrics_csv);
  return st;
}

}  // namespace heatlens
