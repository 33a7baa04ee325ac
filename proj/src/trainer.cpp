#include "dx2ct/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "dx2ct/checkpoint.hpp"

namespace dx2ct::pipeline {

namespace {

std::string log_line(std::size_t step, double loss, double lr, double wall_ms) {
  std::ostringstream os;
  os << std::setprecision(10) << "{\"step\":" << step << ",\"loss\":" << loss
     << ",\"lr\":" << lr << ",\"wall_ms\":" << wall_ms << "}";
  return os.str();
}

bool same_config(const std::string& a, const std::string& b) {
  if (a.empty() || b.empty()) return a == b;
  try {
    return nlohmann::json::parse(a) == nlohmann::json::parse(b);
  } catch (const nlohmann::json::exception&) {
    return a == b;
  }
}

}  // namespace

TrainResult train(const std::vector<data::Sample>& samples,
                  const PipelineConfig& config, const TrainConfig& tc,
                  const std::string& config_echo, const std::string& out_dir,
                  std::ostream* log, const StopHook& stop,
                  const std::string& resume_from) {
  require_valid(!samples.empty(), "train: no samples");
  require_valid(tc.batch_size >= 1, "train: batch_size must be positive");
  require_valid(tc.lr > 0.0, "train: lr must be positive");

  PipelineConfig pc = config;
  pc.finalize();
  for (const data::Sample& s : samples)
    require_valid(s.xrays.biplanar() == pc.biplanar,
                  "train: sample view count does not match config");

  nn::ParamStore<float> store(mix_seed(tc.seed, "params"));
  ModelSet<float> models(store, pc);
  diffusion::NoiseSchedule sched(pc.schedule);
  nn::Adam<float> adam(tc.lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);

  std::vector<SampleTensors<float>> sts;
  for (const data::Sample& s : samples) sts.push_back(sample_tensors<float>(s));

  std::size_t total_steps = tc.steps;
  if (total_steps == 0) {
    std::size_t slices = 0;
    for (const SampleTensors<float>& s : sts)
      slices += s.dims[0] + s.dims[1] + s.dims[2];
    total_steps = tc.epochs * ((slices + tc.batch_size - 1) / tc.batch_size);
  }
  require_valid(total_steps >= 1, "train: nothing to do (zero steps)");

  Rng batch_rng(mix_seed(tc.seed, "batches"));
  std::size_t start_step = 0;
  if (!resume_from.empty()) {
    io::CheckpointMeta meta = io::load_checkpoint(resume_from, store, adam);
    require_valid(same_config(meta.config_echo, config_echo),
                  "train: checkpoint config does not match this run");
    batch_rng.set_state(meta.rng_state);
    start_step = meta.step;
    require_valid(start_step < total_steps,
                  "train: checkpoint is already at or past the final step");
  }

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  auto save = [&](std::size_t step, const std::string& name) {
    const std::string path = out_dir + "/" + name;
    io::save_checkpoint(path, store, adam,
                        {step, batch_rng.state(), config_echo});
    return path;
  };

  TrainResult res;
  for (std::size_t s = start_step + 1; s <= total_steps; ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<TrainItem> batch;
    for (std::size_t b = 0; b < tc.batch_size; ++b) {
      TrainItem it;
      it.sample = static_cast<std::size_t>(
          batch_rng.uniform_int(0, static_cast<std::int64_t>(sts.size()) - 1));
      it.plane = static_cast<geom::Plane>(batch_rng.uniform_int(0, 2));
      const std::size_t n_slices = sts[it.sample].dims[geom::plane_axis(it.plane)];
      it.n = static_cast<std::size_t>(
          batch_rng.uniform_int(1, static_cast<std::int64_t>(n_slices)));
      batch.push_back(it);
    }

    double loss_value = 0.0;
    try {
      ad::Tape<float> tape;
      ad::Var<float> loss =
          training_loss(tape, models, sched, sts, batch, s, tc.seed);
      loss_value = static_cast<double>(loss.value()[0]);
      store.zero_grads();
      tape.backward(loss.id);
      nn::flush_grads(tape, store);
    } catch (const NumericError& e) {
      throw NumericError("train: diverged at step " + std::to_string(s) + ": " +
                         e.what());
    }
    adam.step(store);

    const double wall_ms =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - t0)
            .count();
    res.losses.push_back(loss_value);
    res.steps_run = s;
    res.final_loss = loss_value;
    if (log && (s == start_step + 1 || s == total_steps ||
                (tc.log_every && s % tc.log_every == 0)))
      *log << log_line(s, loss_value, tc.lr, wall_ms) << '\n' << std::flush;
    if (!out_dir.empty() && tc.checkpoint_every && s % tc.checkpoint_every == 0 &&
        s != total_steps) {
      std::ostringstream name;
      name << "step_" << std::setw(6) << std::setfill('0') << s << ".ckpt";
      save(s, name.str());
    }
    if (stop && stop(s, loss_value)) break;
  }

  if (!out_dir.empty()) res.checkpoint_path = save(res.steps_run, "final.ckpt");
  return res;
}

}  // namespace dx2ct::pipeline
