// flowguide: command-line pipelines over structured latents.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flowguide/flowguide.hpp"
#include "gradcheck.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace flowguide;
using io::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::optional<std::uint64_t> config = {}) {
  if (flag) return *flag;
  if (config) return *config;
  if (const char* env = std::getenv("FLOWGUIDE_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::InvalidArgument, std::string("FLOWGUIDE_SEED is not an unsigned integer: ") + env);
  }
  return 0;
}

// Primary output goes to the explicit path if given, else <out-dir>/<fixed name>.
fs::path output_path(const std::string& explicit_path, const std::string& out_dir, const char* fixed) {
  if (!explicit_path.empty()) return explicit_path;
  return fs::path(out_dir.empty() ? "." : out_dir) / fixed;
}

fs::path manifest_path(const std::string& out_dir, const fs::path& primary) {
  if (!out_dir.empty()) return fs::path(out_dir) / "manifest.json";
  const auto parent = primary.parent_path();
  return (parent.empty() ? fs::path(".") : parent) / "manifest.json";
}

void prepare_dir(const fs::path& file) {
  const auto parent = file.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw Error(ErrorKind::WriteFailure, "cannot create directory " + parent.string() + ": " + ec.message());
}

void echo_config(const char* command, const json& config) {
  std::cout << command << " config: " << config.dump() << "\n";
}

void finish(io::RunManifest& m, const fs::path& path) {
  prepare_dir(path);
  io::write_manifest(path, m);
  std::cout << "manifest: " << path.string() << "\n";
}

io::FeatureFile read_features_for(const fs::path& ffld, const StructuredLatent& latent) {
  auto features = io::read_ffld(ffld);
  features.check_aligned(latent);
  return features;
}

// ---------------------------------------------------------------------------------------------

struct ClusterArgs {
  std::vector<std::string> features;
  std::uint32_t k = 8;
  std::optional<std::uint64_t> seed;
  std::uint32_t max_iters = 300;
  std::uint32_t restarts = 20;
  double tol = 1e-10;
  std::string out;
  std::string out_dir;
};

int cmd_cluster(const ClusterArgs& a) {
  KMeansOptions opt;
  opt.k = a.k;
  opt.seed = resolve_seed(a.seed);
  opt.max_iters = a.max_iters;
  opt.restarts = a.restarts;
  opt.tol = a.tol;
  const fs::path out = output_path(a.out, a.out_dir, "clusters.json");

  io::RunManifest m;
  m.command = "cluster";
  m.seed = opt.seed;
  m.config = {{"features", a.features}, {"k", opt.k}, {"seed", opt.seed}, {"max_iters", opt.max_iters}, {"tol", opt.tol}, {"restarts", opt.restarts}};
  echo_config("cluster", m.config);

  io::ClustersDocument doc;
  doc.k = opt.k;
  doc.seed = opt.seed;
  KMeansTrace trace;
  if (a.features.size() == 1) {
    const auto f = io::read_ffld(a.features[0]);
    m.add_input(a.features[0]);
    const auto r = kmeans(f.field, opt, &trace);
    doc.centroids = r.centroids;
    doc.shapes.push_back({"single", io::file_sha256(a.features[0]), r.labels, r.inertia});
  } else {
    const auto q = io::read_ffld(a.features[0]);
    const auto ap = io::read_ffld(a.features[1]);
    m.add_input(a.features[0]);
    m.add_input(a.features[1]);
    const auto [rq, ra] = cosegment(q.field, ap.field, opt, &trace);
    doc.centroids = rq.centroids;
    doc.shapes.push_back({"query", io::file_sha256(a.features[0]), rq.labels, rq.inertia});
    doc.shapes.push_back({"appearance", io::file_sha256(a.features[1]), ra.labels, ra.inertia});
  }
  for (std::size_t i = 0; i < trace.inertia.size(); ++i) {
    std::printf("iteration %zu inertia %.9g\n", i, trace.inertia[i]);
  }
  prepare_dir(out);
  io::write_clusters(out, doc);
  m.add_output(out);
  std::cout << "clusters: " << out.string() << "\n";
  finish(m, manifest_path(a.out_dir, out));
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct CorrespondArgs {
  std::string query_slat, query_features, appearance_slat, appearance_features;
  std::string mode = "coseg_nn";
  std::string clusters;
  std::uint32_t k = 8;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string out_dir;
};

int cmd_correspond(const CorrespondArgs& a) {
  const auto method = parse_correspondence_method(a.mode);
  const std::uint64_t seed = resolve_seed(a.seed);
  const fs::path out = output_path(a.out, a.out_dir, "corr.json");

  io::RunManifest m;
  m.command = "correspond";
  m.seed = seed;
  m.config = {{"query_slat", a.query_slat},
              {"query_features", a.query_features},
              {"appearance_slat", a.appearance_slat},
              {"appearance_features", a.appearance_features},
              {"mode", to_string(method)},
              {"clusters", a.clusters},
              {"k", a.k},
              {"seed", seed}};
  echo_config("correspond", m.config);

  const auto query = io::read_slat(a.query_slat);
  const auto appearance = io::read_slat(a.appearance_slat);
  const auto qf = read_features_for(a.query_features, query);
  const auto af = read_features_for(a.appearance_features, appearance);
  for (const auto& p : {a.query_slat, a.query_features, a.appearance_slat, a.appearance_features}) m.add_input(p);

  std::optional<ClusterAssignment> qc, ac;
  if (method == CorrespondenceMethod::coseg_nn) {
    if (!a.clusters.empty()) {
      const auto doc = io::read_clusters(a.clusters);
      m.add_input(a.clusters);
      qc = doc.assignment("query", io::file_sha256(a.query_features));
      ac = doc.assignment("appearance", io::file_sha256(a.appearance_features));
    } else {
      KMeansOptions opt;
      opt.k = a.k;
      opt.seed = seed;
      auto [rq, ra] = cosegment(qf.field, af.field, opt);
      qc = std::move(rq);
      ac = std::move(ra);
    }
  }

  io::CorrespondenceDocument doc;
  doc.map = build_correspondence({query, qf.field, qc ? &*qc : nullptr}, {appearance, af.field, ac ? &*ac : nullptr},
                                 method);
  doc.query_digest = io::file_sha256(a.query_slat);
  doc.appearance_digest = io::file_sha256(a.appearance_slat);
  doc.appearance_size = static_cast<std::uint32_t>(appearance.size());
  prepare_dir(out);
  io::write_correspondence(out, doc);
  m.add_output(out);
  std::cout << "correspondence: " << out.string() << " (" << doc.map.target.size() << " entries)\n";
  finish(m, manifest_path(a.out_dir, out));
  return 0;
}

// ---------------------------------------------------------------------------------------------

Condition condition_of(const cli::RunConfig& rc) {
  return rc.condition ? Condition::vector(*rc.condition) : Condition::none();
}

// Loads whatever inputs the configured objective needs into the sampler's guidance spec.
void bind_guidance(cli::RunConfig& rc, const StructuredLatent& shape, io::RunManifest& m) {
  auto& g = rc.sampler.guidance;
  switch (g.objective) {
    case GuidanceObjective::none:
      return;
    case GuidanceObjective::appearance: {
      if (!rc.appearance_slat || !rc.correspondence) {
        throw Error(ErrorKind::MissingTarget, "appearance guidance needs appearance.slat and appearance.correspondence");
      }
      const auto appearance = io::read_slat(*rc.appearance_slat);
      const auto corr = io::read_correspondence(*rc.correspondence);
      m.add_input(*rc.appearance_slat);
      m.add_input(*rc.correspondence);
      corr.verify(io::file_sha256(rc.shape), io::file_sha256(*rc.appearance_slat));
      flowguide::detail::require(corr.map.target.size() == shape.size(), ErrorKind::ShapeMismatch,
                                 "correspondence length differs from the query voxel count");
      g.appearance_target = gather_targets(appearance.latents(), corr.map.target);
      return;
    }
    case GuidanceObjective::global_pool: {
      if (!rc.appearance_slat) throw Error(ErrorKind::MissingTarget, "global_pool guidance needs appearance.slat");
      g.appearance_pool = io::read_slat(*rc.appearance_slat).latents();
      m.add_input(*rc.appearance_slat);
      return;
    }
    case GuidanceObjective::structure: {
      if (!rc.structure_features) throw Error(ErrorKind::MissingLabels, "structure guidance needs structure.features");
      const auto features = read_features_for(*rc.structure_features, shape);
      m.add_input(*rc.structure_features);
      if (rc.structure_clusters) {
        const auto doc = io::read_clusters(*rc.structure_clusters);
        m.add_input(*rc.structure_clusters);
        const bool has_query =
            std::any_of(doc.shapes.begin(), doc.shapes.end(), [](const auto& s) { return s.role == "query"; });
        g.cluster_labels = doc.assignment(has_query ? "query" : "single", io::file_sha256(*rc.structure_features));
      } else {
        KMeansOptions opt;
        opt.k = rc.partition_k;
        opt.seed = rc.partition_seed;
        g.cluster_labels = kmeans(features.field, opt);
      }
      return;
    }
  }
}

struct TransferArgs {
  std::string config;
  std::string out, ply, report, out_dir;
  std::optional<std::uint64_t> seed;
};

int cmd_transfer(const TransferArgs& a) {
  auto rc = cli::load_run_config(a.config);
  rc.sampler.seed = resolve_seed(a.seed, rc.seed_given ? std::optional(rc.sampler.seed) : std::nullopt);
  const fs::path out = output_path(a.out, a.out_dir, "result.slat");
  const fs::path ply = output_path(a.ply, a.out_dir, "result.ply");
  const fs::path report = output_path(a.report, a.out_dir, "report.json");

  io::RunManifest m;
  m.command = "transfer";
  m.seed = rc.sampler.seed;
  m.config = cli::to_json(rc);
  echo_config("transfer", m.config);
  m.add_input(a.config);

  const auto shape = io::read_slat(rc.shape);
  m.add_input(rc.shape);
  const auto field = cli::make_field(rc.field, &m);
  bind_guidance(rc, shape, m);

  const auto result = sample_guided(shape, *field, condition_of(rc), rc.sampler);
  for (const auto& p : {out, ply, report}) prepare_dir(p);
  io::write_slat(out, result.state.to_latent());
  io::export_ply(result.state, ply);
  io::detail::write_json_file(report, io::to_json(result.report));
  for (const auto& p : {out, ply, report}) m.add_output(p);
  if (!result.report.applications.empty()) {
    std::printf("guidance %s: loss %.9g -> %.9g over %zu applications\n", to_string(result.report.objective),
                result.report.applications.front().loss_before, result.report.applications.back().loss_after,
                result.report.applications.size());
  }
  std::cout << "result: " << out.string() << "\n";
  finish(m, manifest_path(a.out_dir, out));
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct SampleArgs {
  std::string config;
  std::string shape;
  std::string field = "zero";
  std::vector<double> mean;
  double std = 1.0;
  std::optional<std::uint32_t> steps;
  std::optional<std::uint64_t> seed;
  std::string out, ply, out_dir;
};

int cmd_sample(const SampleArgs& a) {
  cli::RunConfig rc;
  if (!a.config.empty()) {
    rc = cli::load_run_config(a.config);
  } else {
    if (a.shape.empty()) throw Error(ErrorKind::InvalidArgument, "sample needs --config or --shape");
    rc.shape = a.shape;
    rc.field.kind = a.field;
    if (a.field == "gaussian") {
      if (a.mean.empty()) throw Error(ErrorKind::InvalidArgument, "--field gaussian needs --mean");
      rc.field.gaussian.mean = Eigen::Map<const Vector>(a.mean.data(), static_cast<Eigen::Index>(a.mean.size()));
      rc.field.gaussian.std = a.std;
      rc.field.gaussian.validate();
    }
  }
  // Plain flow: any guidance block in a shared config is ignored here.
  rc.sampler.guidance = GuidanceSpec{};
  if (a.steps) rc.sampler.steps = *a.steps;
  rc.sampler.seed = resolve_seed(a.seed, rc.seed_given ? std::optional(rc.sampler.seed) : std::nullopt);
  const fs::path out = output_path(a.out, a.out_dir, "result.slat");

  io::RunManifest m;
  m.command = "sample";
  m.seed = rc.sampler.seed;
  m.config = cli::to_json(rc);
  echo_config("sample", m.config);
  if (!a.config.empty()) m.add_input(a.config);

  const auto shape = io::read_slat(rc.shape);
  m.add_input(rc.shape);
  const auto field = cli::make_field(rc.field, &m);
  const auto state = sample(shape, *field, condition_of(rc), rc.sampler);
  prepare_dir(out);
  io::write_slat(out, state.to_latent());
  m.add_output(out);
  if (!a.ply.empty()) {
    prepare_dir(a.ply);
    io::export_ply(state, a.ply);
    m.add_output(a.ply);
  }
  std::cout << "result: " << out.string() << "\n";
  finish(m, manifest_path(a.out_dir, out));
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct TrainArgs {
  std::string arch = "affine";
  std::vector<double> mean;
  double std = 1.0;
  std::uint32_t steps = 5000;
  std::uint32_t batch_size = 64;
  std::optional<std::uint64_t> seed;
  double lr = 5e-4;
  double weight_decay = 0.01;
  std::uint32_t hidden = TrainableField::kDefaultHidden;
  std::string out, out_dir;
};

int cmd_train_toy(const TrainArgs& a) {
  GaussianFlowSpec spec{Eigen::Map<const Vector>(a.mean.data(), static_cast<Eigen::Index>(a.mean.size())), a.std};
  spec.validate();
  const auto arch = parse_architecture(a.arch);
  TrainOptions opt;
  opt.steps = a.steps;
  opt.batch_size = a.batch_size;
  opt.seed = resolve_seed(a.seed);
  opt.optimizer.learning_rate = a.lr;
  opt.optimizer.weight_decay = a.weight_decay;
  const fs::path out = output_path(a.out, a.out_dir, "params.json");

  io::RunManifest m;
  m.command = "train-toy";
  m.seed = opt.seed;
  m.config = {{"arch", to_string(arch)},
              {"mean", a.mean},
              {"std", a.std},
              {"steps", opt.steps},
              {"batch_size", opt.batch_size},
              {"seed", opt.seed},
              {"lr", a.lr},
              {"weight_decay", a.weight_decay},
              {"hidden", a.hidden}};
  echo_config("train-toy", m.config);

  const auto channels = static_cast<std::uint32_t>(a.mean.size());
  TrainableField init = arch == Architecture::affine ? TrainableField::affine(channels)
                                                     : TrainableField::mlp1(channels, 0, a.hidden, opt.seed);
  const auto result = train_cfm(init, spec, opt);

  // Held-out MSE against the analytic field on the fixed held-out set.
  const auto held_out = draw_held_out(spec);
  const double mse = field_mse(result.field, GaussianVelocityField(spec), held_out);

  io::ParamsDocument doc{result.field, {{"config", m.config},
                                        {"final_batch_loss", result.loss_curve.empty() ? 0.0 : result.loss_curve.back()},
                                        {"held_out_mse_vs_analytic", mse}}};
  prepare_dir(out);
  io::write_params(out, doc);
  m.add_output(out);
  std::printf("final batch loss %.9g, held-out MSE vs analytic %.9g\n",
              result.loss_curve.empty() ? 0.0 : result.loss_curve.back(), mse);
  std::cout << "params: " << out.string() << "\n";
  finish(m, manifest_path(a.out_dir, out));
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct GradcheckArgs {
  cli::GradcheckOptions opt;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

int cmd_gradcheck(GradcheckArgs a) {
  a.opt.seed = resolve_seed(a.seed);
  io::RunManifest m;
  m.command = "gradcheck";
  m.seed = a.opt.seed;
  m.config = {{"instances", a.opt.instances},
              {"seed", a.opt.seed},
              {"h", a.opt.h},
              {"tol", a.opt.tol},
              {"pool_tol", a.opt.pool_tol}};
  echo_config("gradcheck", m.config);
  const auto families = cli::run_gradcheck(a.opt);
  bool ok = true;
  double worst = 0;
  json summary = json::array();
  for (const auto& f : families) {
    std::printf("%-22s instances %u  max rel err %.3e  tol %.0e  %s\n", f.name.c_str(), f.instances, f.max_rel_err,
                f.tolerance, f.ok() ? "ok" : "FAIL");
    summary.push_back({{"family", f.name}, {"max_rel_err", f.max_rel_err}, {"tolerance", f.tolerance}});
    ok = ok && f.ok();
    worst = std::max(worst, f.max_rel_err);
  }
  std::printf("max rel err %.3e\n", worst);
  if (!a.out_dir.empty()) {
    const fs::path out = fs::path(a.out_dir) / "gradcheck.json";
    prepare_dir(out);
    io::detail::write_json_file(out, json{{"families", summary}, {"passed", ok}});
    m.add_output(out);
    finish(m, manifest_path(a.out_dir, out));
  }
  return ok ? 0 : kExitNumeric;
}

// ---------------------------------------------------------------------------------------------

struct EvalArgs {
  std::string records;
  std::string criterion;
  bool flat = false;
  bool strict = false;
  std::string out_dir;
};

int cmd_eval_aggregate(const EvalArgs& a) {
  const Averaging averaging = a.flat ? Averaging::flat : Averaging::per_object;
  io::RunManifest m;
  m.command = "eval-aggregate";
  m.config = {{"records", a.records}, {"criterion", a.criterion}, {"flat", a.flat}, {"strict", a.strict}};
  echo_config("eval-aggregate", m.config);

  std::ifstream in(a.records);
  if (!in) throw Error(ErrorKind::ReadFailure, "cannot open " + a.records);
  const auto parsed = parse_records(in, a.strict);
  m.add_input(a.records);
  for (const auto& issue : parsed.issues) std::cerr << "skipped: " << issue.message << "\n";
  if (parsed.records.empty()) throw Error(ErrorKind::NoRecords, "no valid ranking records in " + a.records);

  RankTable table;
  if (a.criterion.empty()) {
    table = aggregate_all(parsed.records, averaging);
  } else {
    const auto c = parse_criterion(a.criterion);
    if (!c) throw Error(ErrorKind::InvalidArgument, "unknown criterion '" + a.criterion + "'");
    table[*c] = aggregate(parsed.records, *c, averaging);
  }
  const std::string text = render_table(table);
  std::cout << text;
  const fs::path dir = a.out_dir.empty() ? fs::path(".") : fs::path(a.out_dir);
  const fs::path txt = dir / "table.txt";
  const fs::path csv = dir / "table.csv";
  prepare_dir(txt);
  io::write_text_file(txt, text);
  io::write_text_file(csv, render_csv(table));
  m.add_output(txt);
  m.add_output(csv);
  finish(m, dir / "manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct ExportArgs {
  std::string slat, out, out_dir;
};

int cmd_export_ply(const ExportArgs& a) {
  const fs::path out = output_path(a.out, a.out_dir, "result.ply");
  io::RunManifest m;
  m.command = "export-ply";
  m.config = {{"slat", a.slat}, {"out", out.string()}};
  echo_config("export-ply", m.config);
  const auto latent = io::read_slat(a.slat);
  m.add_input(a.slat);
  prepare_dir(out);
  io::export_ply(latent, out);
  m.add_output(out);
  std::cout << "ply: " << out.string() << "\n";
  finish(m, manifest_path(a.out_dir, out));
  return 0;
}

// ---------------------------------------------------------------------------------------------

// Box layouts in units of resolution / 16, each box tagged with a shared part id so that
// different presets live in one feature space.
enum PartId : std::uint32_t { kSeat, kBack, kLeg, kTop, kStem, kShade, kBase, kPartIds };

struct Preset {
  std::vector<PartBox> boxes;
  std::vector<std::uint32_t> ids;
};

Preset preset_boxes(const std::string& name, std::uint32_t n) {
  auto box = [n](int x0, int y0, int z0, int x1, int y1, int z1) {
    auto s = [n](int v) { return static_cast<std::uint16_t>(std::min<std::uint32_t>(n - 1, v * n / 16)); };
    return PartBox{{s(x0), s(y0), s(z0)}, {s(x1), s(y1), s(z1)}};
  };
  if (name == "chair") {
    return {{box(3, 3, 7, 12, 12, 8), box(3, 11, 8, 12, 12, 15), box(3, 3, 0, 4, 4, 7), box(11, 3, 0, 12, 4, 7),
             box(3, 11, 0, 4, 12, 7), box(11, 11, 0, 12, 12, 7)},
            {kSeat, kBack, kLeg, kLeg, kLeg, kLeg}};
  }
  if (name == "table") {
    return {{box(1, 2, 9, 14, 13, 10), box(2, 3, 0, 3, 4, 9), box(12, 3, 0, 13, 4, 9), box(2, 11, 0, 3, 12, 9),
             box(12, 11, 0, 13, 12, 9)},
            {kTop, kLeg, kLeg, kLeg, kLeg}};
  }
  if (name == "lamp") {
    return {{box(5, 5, 0, 10, 10, 1), box(7, 7, 1, 8, 8, 10), box(4, 4, 10, 11, 11, 14)}, {kBase, kStem, kShade}};
  }
  throw Error(ErrorKind::InvalidArgument, "unknown preset '" + name + "' (chair, table, lamp)");
}

struct SynthArgs {
  std::string preset = "chair";
  std::uint32_t resolution = 32;
  std::uint32_t channels = 8;
  double noise = 0.05;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

int cmd_synth(const SynthArgs& a) {
  const std::uint64_t seed = resolve_seed(a.seed);
  if (a.resolution < 16 || a.resolution > 1024) {
    throw Error(ErrorKind::InvalidArgument, "--resolution must be in [16, 1024]");
  }
  io::RunManifest m;
  m.command = "synth";
  m.seed = seed;
  m.config = {{"preset", a.preset},  {"resolution", a.resolution}, {"channels", a.channels},
              {"noise", a.noise},    {"seed", seed}};
  echo_config("synth", m.config);
  const auto preset = preset_boxes(a.preset, a.resolution);
  const auto toy =
      make_labelled_toy_shape(a.resolution, a.channels, preset.boxes, preset.ids, kPartIds + 1, a.noise, seed, a.preset);
  const fs::path slat = fs::path(a.out_dir) / "shape.slat";
  const fs::path ffld = fs::path(a.out_dir) / "features.ffld";
  prepare_dir(slat);
  io::write_slat(slat, toy.latent);
  io::write_ffld(ffld, io::FeatureFile::bind(toy.latent, toy.features));
  m.add_output(slat);
  m.add_output(ffld);
  std::cout << "shape: " << slat.string() << " (" << toy.latent.size() << " voxels)\n";
  finish(m, fs::path(a.out_dir) / "manifest.json");
  return 0;
}

int exit_code_for(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::usage: return kExitUsage;
    case ErrorCategory::data: return kExitData;
    case ErrorCategory::numeric: return kExitNumeric;
  }
  return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowguide: guided rectified-flow sampling and part-aware transfer on structured latents"};
  app.require_subcommand(1);
  std::function<int()> run;

  ClusterArgs cluster;
  auto* c = app.add_subcommand("cluster", "k-means over one feature file, or co-segmentation over two");
  c->add_option("--features", cluster.features, "FFLD feature file (give twice to co-segment)")
      ->required()
      ->expected(1, 2)
      ->take_all()
      ->check(CLI::ExistingFile);
  c->add_option("--k", cluster.k, "number of clusters")->capture_default_str();
  c->add_option("--seed", cluster.seed, "k-means++ seed");
  c->add_option("--max-iters", cluster.max_iters, "Lloyd iteration cap")->capture_default_str();
  c->add_option("--restarts", cluster.restarts, "k-means++ starts; lowest inertia wins")
      ->check(CLI::Range(1u, 1000u))
      ->capture_default_str();
  c->add_option("--tol", cluster.tol, "centroid shift tolerance")->capture_default_str();
  c->add_option("--out", cluster.out, "clusters JSON (default <out-dir>/clusters.json)");
  c->add_option("--out-dir", cluster.out_dir, "output directory");
  c->callback([&] { run = [&] { return cmd_cluster(cluster); }; });

  CorrespondArgs corr;
  auto* r = app.add_subcommand("correspond", "match query voxels to appearance voxels by feature similarity");
  r->add_option("--query-slat", corr.query_slat, "query SLAT file")->required()->check(CLI::ExistingFile);
  r->add_option("--query-features", corr.query_features, "query FFLD file")->required()->check(CLI::ExistingFile);
  r->add_option("--appearance-slat", corr.appearance_slat, "appearance SLAT file")->required()->check(CLI::ExistingFile);
  r->add_option("--appearance-features", corr.appearance_features, "appearance FFLD file")
      ->required()
      ->check(CLI::ExistingFile);
  r->add_option("--mode", corr.mode, "global_nn, coseg_nn or global_pool")->capture_default_str();
  r->add_option("--clusters", corr.clusters, "clusters JSON from `cluster` with both feature files");
  r->add_option("--k", corr.k, "clusters when co-segmenting on the fly")->capture_default_str();
  r->add_option("--seed", corr.seed, "co-segmentation seed");
  r->add_option("--out", corr.out, "correspondence JSON (default <out-dir>/corr.json)");
  r->add_option("--out-dir", corr.out_dir, "output directory");
  r->callback([&] { run = [&] { return cmd_correspond(corr); }; });

  TransferArgs transfer;
  auto* t = app.add_subcommand("transfer", "guided sampling from a run config");
  t->add_option("--config", transfer.config, "run config JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--out", transfer.out, "result SLAT (default <out-dir>/result.slat)");
  t->add_option("--ply", transfer.ply, "result PLY (default <out-dir>/result.ply)");
  t->add_option("--report", transfer.report, "guidance report JSON (default <out-dir>/report.json)");
  t->add_option("--out-dir", transfer.out_dir, "output directory");
  t->add_option("--seed", transfer.seed, "sampler seed (overrides the config)");
  t->callback([&] { run = [&] { return cmd_transfer(transfer); }; });

  SampleArgs sample_args;
  auto* s = app.add_subcommand("sample", "plain reverse flow from seeded noise");
  s->add_option("--config", sample_args.config, "run config JSON (guidance is ignored)")->check(CLI::ExistingFile);
  s->add_option("--shape", sample_args.shape, "SLAT whose voxels and channel count are sampled")
      ->check(CLI::ExistingFile);
  s->add_option("--field", sample_args.field, "zero or gaussian")
      ->check(CLI::IsMember({"zero", "gaussian"}))
      ->capture_default_str();
  s->add_option("--mean", sample_args.mean, "gaussian field mean, comma separated")->delimiter(',');
  s->add_option("--std", sample_args.std, "gaussian field standard deviation")->capture_default_str();
  s->add_option("--steps", sample_args.steps, "Euler steps");
  s->add_option("--seed", sample_args.seed, "noise seed");
  s->add_option("--out", sample_args.out, "result SLAT (default <out-dir>/result.slat)");
  s->add_option("--ply", sample_args.ply, "also export a PLY");
  s->add_option("--out-dir", sample_args.out_dir, "output directory");
  s->callback([&] { run = [&] { return cmd_sample(sample_args); }; });

  TrainArgs train;
  auto* tr = app.add_subcommand("train-toy", "fit a small velocity field to a Gaussian flow by CFM");
  tr->add_option("--arch", train.arch, "affine or mlp1")
      ->check(CLI::IsMember({"affine", "mlp1"}))
      ->capture_default_str();
  tr->add_option("--mean", train.mean, "data mean, comma separated")->required()->delimiter(',');
  tr->add_option("--std", train.std, "data standard deviation")->capture_default_str();
  tr->add_option("--steps", train.steps, "optimizer steps")->capture_default_str();
  tr->add_option("--batch-size", train.batch_size, "samples per step")->capture_default_str();
  tr->add_option("--seed", train.seed, "training seed");
  tr->add_option("--lr", train.lr, "AdamW learning rate")->capture_default_str();
  tr->add_option("--weight-decay", train.weight_decay, "AdamW weight decay")->capture_default_str();
  tr->add_option("--hidden", train.hidden, "mlp1 hidden width")->capture_default_str();
  tr->add_option("--out", train.out, "params JSON (default <out-dir>/params.json)");
  tr->add_option("--out-dir", train.out_dir, "output directory");
  tr->callback([&] { run = [&] { return cmd_train_toy(train); }; });

  GradcheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "compare analytic gradients with central differences");
  g->set_help_flag("--help", "Print this help message and exit");  // -h is taken by the step size
  g->add_option("--instances", grad.opt.instances, "random instances")->capture_default_str();
  g->add_option("--seed", grad.seed, "instance seed");
  g->add_option("--h", grad.opt.h, "finite difference step")->capture_default_str();
  g->add_option("--tol", grad.opt.tol, "relative error tolerance")->capture_default_str();
  g->add_option("--pool-tol", grad.opt.pool_tol, "tolerance for pooled and CFM gradients")->capture_default_str();
  g->add_option("--out-dir", grad.out_dir, "write gradcheck.json and a manifest here");
  g->callback([&] { run = [&] { return cmd_gradcheck(grad); }; });

  EvalArgs eval;
  auto* e = app.add_subcommand("eval-aggregate", "mean-rank table from JSON-lines ranking records");
  e->add_option("--records", eval.records, "JSON-lines records")->required()->check(CLI::ExistingFile);
  e->add_option("--criterion", eval.criterion, "aggregate one criterion (default: all present)");
  e->add_flag("--flat", eval.flat, "average over all views at once instead of per object");
  e->add_flag("--strict", eval.strict, "fail on the first malformed record");
  e->add_option("--out-dir", eval.out_dir, "directory for table.txt, table.csv, manifest.json");
  e->callback([&] { run = [&] { return cmd_eval_aggregate(eval); }; });

  ExportArgs exp;
  auto* x = app.add_subcommand("export-ply", "write a SLAT as a PCA-coloured PLY point cloud");
  x->add_option("--slat", exp.slat, "SLAT file")->required()->check(CLI::ExistingFile);
  x->add_option("--out", exp.out, "PLY file (default <out-dir>/result.ply)");
  x->add_option("--out-dir", exp.out_dir, "output directory");
  x->callback([&] { run = [&] { return cmd_export_ply(exp); }; });

  SynthArgs synth;
  auto* y = app.add_subcommand("synth", "generate a toy part-structured shape with features");
  y->add_option("--preset", synth.preset, "chair, table or lamp")->capture_default_str();
  y->add_option("--resolution", synth.resolution, "grid resolution N")->capture_default_str();
  y->add_option("--channels", synth.channels, "latent channels")->capture_default_str();
  y->add_option("--noise", synth.noise, "latent and feature noise level")->capture_default_str();
  y->add_option("--seed", synth.seed, "generator seed");
  y->add_option("--out-dir", synth.out_dir, "directory for shape.slat and features.ffld")->capture_default_str();
  y->callback([&] { run = [&] { return cmd_synth(synth); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? 0 : kExitUsage;
  }

  try {
    return run();
  } catch (const Error& err) {
    std::cerr << "error [" << to_string(err.kind()) << "]: " << err.what() << "\n";
    return exit_code_for(err);
  } catch (const CLI::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitData;
  }
}
