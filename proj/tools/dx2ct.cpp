#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dx2ct/checkpoint.hpp"
#include "dx2ct/common.hpp"
#include "dx2ct/config.hpp"
#include "dx2ct/container.hpp"
#include "dx2ct/metrics.hpp"
#include "dx2ct/phantom.hpp"
#include "dx2ct/pipeline.hpp"
#include "dx2ct/trainer.hpp"

namespace fs = std::filesystem;
using namespace dx2ct;

namespace {

void run_phantom_gen(const std::string& out, std::size_t count,
                     std::size_t res, std::uint64_t seed,
                     const std::string& mode) {
  const bool biplanar = mode == "biplanar";
  data::build_dataset(seed, count, res, biplanar, out);
  std::cout << "wrote " << count << " samples (" << res << "^3, " << mode
            << ") -> " << out << "\n";
}

void run_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out, const std::string& log_path,
               const std::string& resume) {
  const config::RunConfig rc = config::read_config_file(config_path);
  const std::string echo = config::config_echo(rc);
  const std::vector<data::Sample> samples =
      data::load_samples((fs::path(data_dir) / "manifest.json").string());

  const fs::path out_path(out);
  fs::path dir = out_path.parent_path();
  if (dir.empty()) dir = ".";
  fs::create_directories(dir);

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file.open(log_path, std::ios::trunc);
    if (!log_file) throw IoError(log_path + ": cannot open for writing");
    log = &log_file;
  }

  const pipeline::TrainResult r = pipeline::train(
      samples, rc.pipeline, rc.train, echo, dir.string(), log, {}, resume);
  if (!fs::equivalent(fs::path(r.checkpoint_path), out_path) &&
      fs::path(r.checkpoint_path) != out_path)
    fs::rename(r.checkpoint_path, out_path);
  std::cout << "trained " << r.steps_run << " steps, final loss "
            << r.final_loss << " -> " << out << "\n";
}

void run_sample(const std::string& ckpt, const std::string& pa_path,
                const std::string& lat_path, const std::string& plane,
                std::uint64_t seed, const std::string& out) {
  const std::string echo = io::peek_checkpoint_config(ckpt);
  if (echo.empty())
    throw ValidationError("sample: checkpoint carries no config");
  const config::RunConfig rc = config::parse_config(echo);
  if (rc.pipeline.biplanar && lat_path.empty())
    throw ValidationError("sample: model is biplanar, --lat is required");
  if (!rc.pipeline.biplanar && !lat_path.empty())
    throw ValidationError("sample: model is monoplanar, --lat is not accepted");

  nn::ParamStore<float> store(0);
  pipeline::ModelSet<float> models(store, rc.pipeline);
  nn::Adam<float> adam;
  io::load_checkpoint(ckpt, store, adam);

  data::XRaySet xrays;
  xrays.pa = io::read_image(pa_path);
  if (!lat_path.empty()) xrays.lat = io::read_image(lat_path);
  const pipeline::SampleTensors<float> s =
      pipeline::xray_tensors<float>(xrays);
  const diffusion::NoiseSchedule sched(rc.pipeline.schedule);

  fs::create_directories(out);
  if (plane == "all") {
    const std::array<data::Volume, 3> vols =
        pipeline::reconstruct_all_planes(models, sched, s, seed);
    const char* names[3] = {"axial", "coronal", "sagittal"};
    for (std::size_t p = 0; p < 3; ++p)
      io::write_array((fs::path(out) / (std::string(names[p]) + ".vol")).string(),
                      vols[p]);
    std::cout << "sampled 3 planes -> " << out << "\n";
  } else {
    const geom::Plane p = geom::plane_from_string(plane);
    const data::Volume vol =
        pipeline::reconstruct_volume(models, sched, s, p, seed);
    io::write_array((fs::path(out) / (plane + ".vol")).string(), vol);
    std::cout << "sampled " << plane << " -> " << out << "\n";
  }
}

void run_eval(const std::string& pred_dir, const std::string& gt_path,
              const std::string& report_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::array<Tensor<float>, 3> preds = {
      io::read_volume((fs::path(pred_dir) / "axial.vol").string()),
      io::read_volume((fs::path(pred_dir) / "coronal.vol").string()),
      io::read_volume((fs::path(pred_dir) / "sagittal.vol").string())};
  const Tensor<float> gt = io::read_volume(gt_path);
  metrics::MetricReport r = metrics::evaluate(preds, gt);
  r.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  metrics::write_report(r, report_path);
  std::cout << metrics::report_json(r) << "\n";
}

void run_montage(const std::string& vol_path, const std::string& plane,
                 const std::string& grid, const std::string& out) {
  std::size_t rows = 0, cols = 0;
  const std::size_t x = grid.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(grid);
    rows = std::stoul(grid.substr(0, x));
    cols = std::stoul(grid.substr(x + 1));
  } catch (const std::exception&) {
    throw ValidationError("montage: grid must look like 4x4, got '" + grid +
                          "'");
  }
  const Tensor<float> vol = io::read_volume(vol_path);
  metrics::montage(vol, geom::plane_from_string(plane), rows, cols, out);
  std::cout << "wrote " << rows << "x" << cols << " " << plane
            << " montage -> " << out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"biplanar X-ray to CT diffusion pipeline"};
  app.require_subcommand(1);

  // phantom-gen
  std::string gen_out, gen_mode = "biplanar";
  std::size_t gen_count = 4, gen_res = 32;
  std::uint64_t gen_seed = 0;
  CLI::App* gen = app.add_subcommand("phantom-gen", "generate a phantom dataset");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of samples");
  gen->add_option("--res", gen_res, "cubic volume resolution");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--mode", gen_mode, "view setup")
      ->check(CLI::IsMember({"biplanar", "monoplanar"}));
  gen->callback(
      [&] { run_phantom_gen(gen_out, gen_count, gen_res, gen_seed, gen_mode); });

  // train
  std::string tr_config, tr_data, tr_out, tr_log, tr_resume;
  CLI::App* tr = app.add_subcommand("train", "train the pipeline");
  tr->add_option("--config", tr_config, "JSON config file")->required();
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "output checkpoint path")->required();
  tr->add_option("--log", tr_log, "JSONL progress log (default: stdout)");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr->callback([&] { run_train(tr_config, tr_data, tr_out, tr_log, tr_resume); });

  // sample
  std::string sm_ckpt, sm_pa, sm_lat, sm_plane, sm_out;
  std::uint64_t sm_seed = 0;
  CLI::App* sm = app.add_subcommand("sample", "reconstruct CT volumes");
  sm->add_option("--ckpt", sm_ckpt, "trained checkpoint")->required();
  sm->add_option("--pa", sm_pa, "PA view image")->required();
  sm->add_option("--lat", sm_lat, "Lat view image");
  sm->add_option("--plane", sm_plane, "slicing plane")
      ->required()
      ->check(CLI::IsMember({"axial", "coronal", "sagittal", "all"}));
  sm->add_option("--seed", sm_seed, "starting-noise seed");
  sm->add_option("--out", sm_out, "output directory")->required();
  sm->callback(
      [&] { run_sample(sm_ckpt, sm_pa, sm_lat, sm_plane, sm_seed, sm_out); });

  // eval
  std::string ev_pred, ev_gt, ev_report;
  CLI::App* ev = app.add_subcommand("eval", "score reconstructions");
  ev->add_option("--pred", ev_pred, "directory with axial/coronal/sagittal .vol")
      ->required();
  ev->add_option("--gt", ev_gt, "ground-truth volume")->required();
  ev->add_option("--report", ev_report, "output JSON report")->required();
  ev->callback([&] { run_eval(ev_pred, ev_gt, ev_report); });

  // montage
  std::string mo_vol, mo_plane = "axial", mo_grid = "4x4", mo_out;
  CLI::App* mo = app.add_subcommand("montage", "slice grid as PGM");
  mo->add_option("--vol", mo_vol, "volume file")->required();
  mo->add_option("--plane", mo_plane, "slicing plane")
      ->check(CLI::IsMember({"axial", "coronal", "sagittal"}));
  mo->add_option("--grid", mo_grid, "rows x cols, e.g. 4x4");
  mo->add_option("--out", mo_out, "output PGM path")->required();
  mo->callback([&] { run_montage(mo_vol, mo_plane, mo_grid, mo_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
