#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "tibp/error.hpp"
#include "tibp/eval.hpp"
#include "tibp/io.hpp"
#include "tibp/likelihood.hpp"
#include "tibp/sampler.hpp"
#include "tibp/synth.hpp"

using namespace tibp;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::variant:
      return 1;
    case ErrorKind::numeric:
    case ErrorKind::degenerate_variance:
      return 3;
    default:
      return 2;
  }
}

struct SynthArgs {
  std::string out;
  int n_images = 100, height = 9, width = 9;
  std::string mode = "occluding";
  double include_prob = 0.5, noise = 0.0;
  std::uint64_t seed = 1;
  std::string rotations = "0", scales = "1";
};

int run_synth(const SynthArgs& a) {
  SynthSpec spec;
  spec.n_images = a.n_images;
  spec.height = a.height;
  spec.width = a.width;
  spec.mode = parse_composition(a.mode);
  spec.include_prob = a.include_prob;
  spec.noise = a.noise;
  spec.rotations = parse_real_list(a.rotations);
  spec.scales = parse_real_list(a.scales);
  Rng rng(a.seed);
  auto [data, truth] = generate_synthetic_dataset(spec, rng);
  write_image_directory(a.out, data);
  write_truth_manifest(fs::path(a.out) / "truth.manifest", truth);
  std::cout << "wrote " << data.size() << " images and truth.manifest to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, config, out, trace, resume;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  const std::string dir = a.data.empty() ? cfg.data_dir : a.data;
  if (dir.empty()) fail(ErrorKind::usage, "no data directory given");
  auto data = std::make_shared<const Dataset>(
      load_image_directory(dir, {cfg.resize_h, cfg.resize_w, cfg.normalize}));
  ModelState state;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume);
    if (!(*state.data == *data)) fail(ErrorKind::data, "data differ from the checkpoint's training data");
    state.data = data;
    if (state.variant != cfg.variant) fail(ErrorKind::usage, "config variant differs from the checkpoint");
  } else {
    state = init_state(data, cfg.model_config());
  }
  SamplerOptions opts;
  opts.proposal_temperature = cfg.proposal_temperature;
  opts.hyper_burnin = cfg.hyper_burnin;
  Sampler sampler(state, opts);

  std::ostringstream trace;
  write_trace_header(trace);
  const int remaining = std::max(0, cfg.iterations - state.iteration);
  run_chain(state, sampler, remaining, [&](const SweepReport& rep, const ModelState& st) {
    write_trace_row(trace, rep, st);
    if (!std::isfinite(rep.log_joint)) fail(ErrorKind::numeric, "log joint became non-finite");
  });
  write_file_atomic(a.trace, trace.str());
  save_checkpoint(state, a.out);
  std::cout << to_string(state.variant) << ": " << state.iteration << " sweeps, K+ = " << state.num_features()
            << ", sigma_x = " << state.hyper.sigma_x << ", training RMSE = " << training_rmse(state) << "\n";
  return 0;
}

struct ReconArgs {
  std::string checkpoint, data, out, metrics;
  int sweeps = 20;
  std::uint64_t seed = 1;
};

int run_reconstruct(const ReconArgs& a) {
  const ModelState trained = load_checkpoint(a.checkpoint);
  const auto files = list_images(a.data);
  if (files.empty()) fail(ErrorKind::data, a.data + " contains no PGM/PPM images");
  fs::create_directories(a.out);
  Rng rng(a.seed);
  std::ostringstream csv;
  csv << "image,active_features,rmse\n" << std::setprecision(17);
  double total = 0.0;
  for (const auto& f : files) {
    Image raw = read_pnm(f);
    if (raw.height != trained.data->height() || raw.width != trained.data->width()) {
      raw = box_resize(raw, trained.data->height(), trained.data->width());
    }
    const Image x = normalize_with(raw, *trained.data);
    const Reconstruction rec = reconstruct_test_image(trained, x, a.sweeps, rng);
    const double rmse = per_pixel_rmse(rec.image, x);
    total += rmse * rmse;
    int active = 0;
    for (auto z : rec.z) active += z;
    csv << f.filename().string() << ',' << active << ',' << rmse << '\n';
    Dataset one;
    one.images = {rec.image};
    one.channel_mean = trained.data->channel_mean;
    one.channel_stddev = trained.data->channel_stddev;
    Dataset back = denormalize_dataset(one);
    write_pnm(fs::path(a.out) / (f.stem().string() + "_recon" + f.extension().string()), back.images[0]);
  }
  const double pooled = std::sqrt(total / files.size());
  csv << "all," << "," << pooled << '\n';
  write_file_atomic(a.metrics, csv.str());
  std::cout << "reconstructed " << files.size() << " images, RMSE = " << pooled << "\n";
  return 0;
}

struct BenchArgs {
  std::string sizes = "9,15", samplers = "mh,naive", out;
  int iterations = 100;
  std::uint64_t seed = 1;
};

int run_bench(const BenchArgs& a) {
  BenchmarkOptions opts;
  opts.sizes = parse_int_list(a.sizes);
  opts.samplers.clear();
  std::stringstream ss(a.samplers);
  for (std::string s; std::getline(ss, s, ',');) opts.samplers.push_back(s);
  opts.iterations = a.iterations;
  opts.seed = a.seed;
  const auto rows = run_benchmark(opts, [](const BenchmarkRow& r) {
    if (r.iteration % 10 == 0) {
      std::cerr << r.sampler << " D=" << r.image_size << " it " << r.iteration << " K " << r.num_features
                << " t " << r.seconds << "s\n";
    }
  });
  std::ostringstream csv;
  write_benchmark_csv(csv, rows);
  write_file_atomic(a.out, csv.str());
  return 0;
}

struct MatchArgs {
  std::string checkpoint, truth, out;
};

int run_match(const MatchArgs& a) {
  const ModelState st = load_checkpoint(a.checkpoint);
  const GroundTruth truth = read_truth_manifest(a.truth);
  const auto learned = learned_appearances(st);
  if (learned.empty()) fail(ErrorKind::data, "checkpoint has no features to match");
  const MatchResult m = feature_match_score(learned, normalized_truth(truth, *st.data), st.space);
  std::ostringstream csv;
  csv << "true_feature,learned_index,learned_id,rmse\n" << std::setprecision(17);
  for (int t = 0; t < truth.num_features(); ++t) {
    const int l = m.assignment[t];
    csv << truth.features[t].name << ',' << l << ',' << (l >= 0 ? st.features[l].id : -1) << ','
        << m.matched_rmse[t] << '\n';
  }
  for (int l : m.unmatched_learned) csv << "," << l << ',' << st.features[l].id << ",\n";
  csv << "mean,,," << m.mean_rmse << '\n';
  write_file_atomic(a.out, csv.str());
  std::cout << "mean matched RMSE " << m.mean_rmse << " (" << m.unmatched_learned.size()
            << " unmatched learned features)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformed Indian buffet process image models"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic glyph dataset");
  synth->add_option("--out", sa.out)->required();
  synth->add_option("--n-images", sa.n_images);
  synth->add_option("--height", sa.height);
  synth->add_option("--width", sa.width);
  synth->add_option("--mode", sa.mode)->check(CLI::IsMember({"additive", "occluding"}));
  synth->add_option("--include-prob", sa.include_prob);
  synth->add_option("--noise", sa.noise);
  synth->add_option("--seed", sa.seed);
  synth->add_option("--rotations", sa.rotations, "comma-separated radians, e.g. 0,pi/2,pi,3pi/2");
  synth->add_option("--scales", sa.scales);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "run the sampler on an image directory");
  train->add_option("--data", ta.data);
  train->add_option("--config", ta.config)->required();
  train->add_option("--out", ta.out)->required();
  train->add_option("--trace", ta.trace)->required();
  train->add_option("--resume", ta.resume);

  ReconArgs ra;
  auto* recon = app.add_subcommand("reconstruct", "held-out reconstruction with frozen features");
  recon->add_option("--checkpoint", ra.checkpoint)->required();
  recon->add_option("--data", ra.data)->required();
  recon->add_option("--out", ra.out)->required();
  recon->add_option("--metrics", ra.metrics)->required();
  recon->add_option("--sweeps", ra.sweeps);
  recon->add_option("--seed", ra.seed);

  BenchArgs ba;
  auto* bench = app.add_subcommand("benchmark", "MH versus naive enumeration timing");
  bench->add_option("--sizes", ba.sizes);
  bench->add_option("--samplers", ba.samplers);
  bench->add_option("--iterations", ba.iterations);
  bench->add_option("--out", ba.out)->required();
  bench->add_option("--seed", ba.seed);

  MatchArgs ma;
  auto* match = app.add_subcommand("match", "score learned features against a truth manifest");
  match->add_option("--checkpoint", ma.checkpoint)->required();
  match->add_option("--truth", ma.truth)->required();
  match->add_option("--out", ma.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*train) return run_train(ta);
    if (*recon) return run_reconstruct(ra);
    if (*bench) return run_bench(ba);
    if (*match) return run_match(ma);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
