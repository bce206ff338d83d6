// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowguide/evalagg.hpp"
#include "flowguide/flow.hpp"
#include "flowguide/io.hpp"
#include "flowguide/partition.hpp"
#include "flowguide/toyflows.hpp"
#include "flowguide/toyshapes.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace flowguide;
using flowguide::cli::GradcheckOptions;
using flowguide::cli::run_gradcheck;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      note("failed: " + what);
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// One voxel per independent chain.
StructuredLatent rows_shape(std::size_t rows, std::uint32_t channels) {
  std::vector<VoxelPosition> pos;
  for (std::size_t i = 0; pos.size() < rows; ++i) {
    pos.push_back({static_cast<std::uint16_t>(i % 128), static_cast<std::uint16_t>((i / 128) % 128),
                   static_cast<std::uint16_t>(i / (128 * 128))});
  }
  std::sort(pos.begin(), pos.end(), canonical_less);
  return StructuredLatent::from_matrix(128, std::move(pos), Matrix::Zero(static_cast<Eigen::Index>(rows), channels));
}

const std::vector<PartBox>& two_boxes() {
  static const std::vector<PartBox> boxes{{{0, 0, 0}, {5, 5, 2}}, {{0, 0, 3}, {5, 5, 5}}};
  return boxes;
}

ClusterAssignment box_labels(const StructuredLatent& shape) {
  ClusterAssignment a;
  a.k = 2;
  for (const auto& p : shape.positions()) a.labels.push_back(static_cast<std::uint32_t>(part_of(p, two_boxes())));
  return a;
}

// ---------------------------------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  GradcheckOptions opt;
  opt.instances = 100;
  opt.seed = 0;
  for (const auto& f : run_gradcheck(opt)) {
    o.require(f.instances >= 100, f.name + " ran " + std::to_string(f.instances) + " instances");
    o.require(f.ok(), f.name + " max rel err " + fmt("%.3g", f.max_rel_err));
    o.note(f.name + " " + fmt("%.2g", f.max_rel_err) + " < " + fmt("%.0e", f.tolerance));
  }
  const double secs = seconds_since(start);
  o.require(secs < 30, "runtime " + fmt("%.1f s", secs));
  o.note(fmt("%.1f s", secs));
  return o;
}

Outcome analytic_fidelity() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  const std::vector<GaussianFlowSpec> specs{
      {(Vector(8) << 0.5, -1, 2, 0, 0.25, -0.75, 1.5, -2).finished(), 0.6},
      {(Vector(3) << -0.4, 0.9, 0.0).finished(), 1.3},
      {Vector::Constant(1, 0.2), 0.25},
  };
  double worst_mean = 0, worst_sd = 0;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& spec = specs[s];
    const auto c = static_cast<std::uint32_t>(spec.mean.size());
    SamplerConfig cfg;
    cfg.steps = 300;
    cfg.seed = 100 + s;
    const auto out = sample(rows_shape(10000, c), GaussianVelocityField(spec), {}, cfg);
    const Matrix& v = out.values();
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      const double mean = v.col(j).mean();
      const double sd = std::sqrt((v.col(j).array() - mean).square().sum() / static_cast<double>(v.rows() - 1));
      worst_mean = std::max(worst_mean, std::abs(mean - spec.mean(j)));
      worst_sd = std::max(worst_sd, std::abs(sd / spec.std - 1));
    }
  }
  o.require(worst_mean < 0.05, "max |mean - mu| " + fmt("%.4f", worst_mean));
  o.require(worst_sd < 0.05, "max |std/sigma - 1| " + fmt("%.4f", worst_sd));

  std::mt19937_64 gen(1);
  double worst_boundary = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index c = 1 + trial % 8;
    const GaussianFlowSpec spec{oracle::random_matrix(1, c, gen).row(0).transpose(), 0.1 + 0.05 * (trial % 30)};
    const Matrix z = oracle::random_matrix(7, c, gen, 3.0);
    worst_boundary = std::max(worst_boundary, (gaussian_analytic_velocity(spec, z, 0.0) + z).cwiseAbs().maxCoeff());
    worst_boundary =
        std::max(worst_boundary, (gaussian_analytic_velocity(spec, z, 1.0) - (z.rowwise() - spec.mean.transpose()))
                                     .cwiseAbs()
                                     .maxCoeff());
  }
  o.require(worst_boundary <= 1e-12, "boundary identity error " + fmt("%.3g", worst_boundary));
  const double secs = seconds_since(start);
  o.require(secs < 60, "runtime " + fmt("%.1f s", secs));
  o.note("mean err " + fmt("%.4f", worst_mean) + ", std ratio err " + fmt("%.4f", worst_sd) + ", boundary " +
         fmt("%.1e", worst_boundary) + ", " + fmt("%.1f s", secs));
  return o;
}

Outcome zero_weight_equivalence() {
  Outcome o;
  const auto query = make_toy_shape(6, 4, two_boxes(), 0.05, 5, "q");
  const auto appearance = make_toy_shape(6, 4, two_boxes(), 0.05, 6, "a");
  const GaussianVelocityField field({Vector::Constant(4, 0.3), 0.8});
  const GuidanceObjective objectives[] = {GuidanceObjective::appearance, GuidanceObjective::structure,
                                          GuidanceObjective::global_pool};
  int identical = 0;
  for (std::uint64_t n = 0; n < 20; ++n) {
    SamplerConfig cfg;
    cfg.steps = 40;
    cfg.seed = 1000 + n;
    const auto plain = sample(query.latent, field, {}, cfg);
    auto& g = cfg.guidance;
    g.objective = objectives[n % 3];
    g.weight = 0.0;
    g.mode = n % 2 == 0 ? GuidanceMode::optimizer_steps : GuidanceMode::gradient_step;
    g.inner_steps = 1 + static_cast<std::uint32_t>(n % 4);
    g.apply_every = 1 + static_cast<std::uint32_t>(n % 3);
    cfg.placement = n % 4 < 2 ? GuidancePlacement::after_flow_step : GuidancePlacement::before_flow_step;
    g.appearance_target = appearance.latent.latents().topRows(query.latent.size());
    g.appearance_pool = appearance.latent.latents();
    g.cluster_labels = box_labels(query.latent);
    const auto guided = sample_guided(query.latent, field, {}, cfg);
    if (guided.state.values() == plain.values()) ++identical;
  }
  o.require(identical == 20, std::to_string(identical) + "/20 identical");
  o.note(std::to_string(identical) + "/20 configurations bit-identical");
  return o;
}

Outcome guidance_convergence() {
  Outcome o;
  constexpr std::uint32_t kInnerSteps = 50;
  double worst = 0;
  int converged = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto toy = make_toy_shape(6, 4, two_boxes(), 0.05, 200 + seed, "q");
    SamplerConfig cfg;
    cfg.steps = 300;
    cfg.seed = seed;
    cfg.guidance.objective = GuidanceObjective::appearance;
    cfg.guidance.appearance_target = toy.latent.latents();
    cfg.guidance.inner_steps = kInnerSteps;
    cfg.guidance.optimizer.learning_rate = 5e-4;
    const auto out = sample_guided(toy.latent, ZeroVelocityField(), {}, cfg);
    const double initial = appearance_loss(init_latent_state(toy.latent, seed).values(), toy.latent.latents());
    const double final_loss = appearance_loss(out.state.values(), toy.latent.latents());
    worst = std::max(worst, final_loss);
    if (final_loss < 1e-2 && final_loss < initial) ++converged;
  }
  o.require(converged == 10, "appearance converged in " + std::to_string(converged) + "/10");

  const auto toy = make_toy_shape(6, 4, two_boxes(), 0.05, 10, "s");
  const auto labels = box_labels(toy.latent);
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SamplerConfig cfg;
    cfg.steps = 300;
    cfg.seed = seed;
    const auto plain = sample(toy.latent, ZeroVelocityField(), {}, cfg);
    cfg.guidance.objective = GuidanceObjective::structure;
    cfg.guidance.cluster_labels = labels;
    cfg.guidance.inner_steps = 5;
    const auto guided = sample_guided(toy.latent, ZeroVelocityField(), {}, cfg);
    if (structure_loss(guided.state.values(), labels.labels) < structure_loss(plain.values(), labels.labels)) ++wins;
  }
  o.require(wins >= 9, "structure wins " + std::to_string(wins) + "/10");
  o.note("appearance " + std::to_string(converged) + "/10 below 1e-2 (worst " + fmt("%.2e", worst) + ", " +
         std::to_string(kInnerSteps) + " AdamW steps per flow step, lr 5e-4); structure wins " +
         std::to_string(wins) + "/10");
  return o;
}

Outcome oracle_equivalence() {
  Outcome o;
  std::mt19937_64 gen(14);
  std::uniform_int_distribution<int> size(1, 200);
  int nn_ok = 0;
  for (int t = 0; t < 50; ++t) {
    const int l = size(gen), m = size(gen);
    const auto fq = FeatureField::create("q", oracle::random_matrix(l, 4, gen));
    const auto fa = FeatureField::create("a", oracle::random_matrix(m, 4, gen));
    auto latent = [](int n) {
      std::vector<VoxelPosition> pos;
      for (int i = 0; i < n; ++i) pos.push_back({static_cast<std::uint16_t>(i % 64), static_cast<std::uint16_t>(i / 64), 0});
      return StructuredLatent::from_matrix(64, pos, Matrix::Zero(n, 1));
    };
    const auto lq = latent(l), la = latent(m);
    if (build_correspondence({lq, fq}, {la, fa}, CorrespondenceMethod::global_nn).target ==
        oracle::brute_force_nn(fq.features, fa.features)) {
      ++nn_ok;
    }
  }
  o.require(nn_ok == 50, "global_nn matched " + std::to_string(nn_ok) + "/50");

  std::uniform_int_distribution<int> small(3, 12);
  int km_total = 0, km_ok = 0, traces = 0;
  bool monotone = true;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = small(gen);
    const auto f = FeatureField::create("p", oracle::random_matrix(n, 1 + trial % 3, gen));
    for (std::uint32_t k : {1u, 2u, static_cast<std::uint32_t>(n)}) {
      KMeansOptions opt;
      opt.k = k;
      opt.seed = static_cast<std::uint64_t>(trial);
      KMeansTrace trace;
      const auto r = kmeans(f, opt, &trace);
      const double target = k == static_cast<std::uint32_t>(n) ? 0.0 : oracle::enumerate_partitions(f.features, k).inertia;
      ++km_total;
      if (std::abs(r.inertia - target) <= 1e-9 * std::max(1.0, target)) ++km_ok;
      for (std::size_t i = 1; i < trace.inertia.size(); ++i) monotone = monotone && trace.inertia[i] <= trace.inertia[i - 1];
      ++traces;
    }
  }
  for (int trial = 0; trial < 40; ++trial) {
    const auto f = FeatureField::create("p", oracle::random_matrix(80, 3, gen));
    KMeansOptions opt;
    opt.k = 2 + static_cast<std::uint32_t>(trial % 7);
    opt.seed = static_cast<std::uint64_t>(trial);
    KMeansTrace trace;
    kmeans(f, opt, &trace);
    for (std::size_t i = 1; i < trace.inertia.size(); ++i) monotone = monotone && trace.inertia[i] <= trace.inertia[i - 1];
    ++traces;
  }
  o.require(km_ok == km_total, "k-means matched " + std::to_string(km_ok) + "/" + std::to_string(km_total));
  o.require(monotone, "an inertia trace increased");
  o.note("global_nn " + std::to_string(nn_ok) + "/50, k-means " + std::to_string(km_ok) + "/" +
         std::to_string(km_total) + ", " + std::to_string(traces) + " traces non-increasing");
  return o;
}

// Smallest held-out MSE any affine map of (z, t) can reach against the analytic field.
double best_affine_mse(const GaussianFlowSpec& spec, const std::vector<CfmSample>& held_out) {
  const Eigen::Index c = spec.mean.size();
  const auto n = static_cast<Eigen::Index>(held_out.size());
  Matrix design(n, c + 2), target(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = held_out[static_cast<std::size_t>(i)];
    const Matrix z = forward_interpolate(s.z0, s.eps, s.t);
    design.block(i, 0, 1, c) = z;
    design(i, c) = s.t;
    design(i, c + 1) = 1.0;
    target.row(i) = gaussian_analytic_velocity(spec, z, s.t);
  }
  const Matrix w = design.colPivHouseholderQr().solve(target);
  return (design * w - target).squaredNorm() / static_cast<double>(target.size());
}

Outcome cfm_learnability() {
  Outcome o;
  const GaussianFlowSpec spec{(Vector(2) << 0.5, -0.3).finished(), 0.5};
  const GaussianVelocityField analytic(spec);
  const auto held_out = draw_held_out(spec);
  TrainOptions opt;
  opt.seed = 7;
  const auto trained = train_cfm(TrainableField::affine(2), spec, opt).field;
  const double mse = field_mse(trained, analytic, held_out);
  o.require(mse < 1e-2, "affine held-out MSE " + fmt("%.4f", mse) + " (best affine fit " +
                            fmt("%.4f", best_affine_mse(spec, held_out)) + ")");

  const auto la = cfm_losses(analytic, held_out);
  const auto lt = cfm_losses(trained, held_out);
  std::vector<double> d(la.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = la[i] - lt[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  double ss = 0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double se = std::sqrt(ss / static_cast<double>(d.size() - 1) / static_cast<double>(d.size()));
  o.require(mean <= 3 * se, "analytic minus trained CFM loss " + fmt("%.4f", mean) + " > 3 SE");
  o.note("affine MSE " + fmt("%.4f", mse) + ", CFM loss analytic - trained " + fmt("%.4f", mean) + " (SE " +
         fmt("%.4f", se) + ")");
  return o;
}

StructuredLatent random_latent(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> res_d(1, 64), ch_d(1, 8);
  const auto n = static_cast<std::uint32_t>(res_d(gen));
  const auto c = static_cast<std::uint32_t>(ch_d(gen));
  const std::size_t cells = static_cast<std::size_t>(n) * n * n;
  std::uniform_int_distribution<std::size_t> count_d(1, std::min<std::size_t>(cells, 40));
  const std::size_t count = count_d(gen);
  std::set<std::size_t> picked;
  std::uniform_int_distribution<std::size_t> cell(0, cells - 1);
  while (picked.size() < count) picked.insert(cell(gen));
  std::vector<VoxelPosition> pos;
  for (auto idx : picked) {
    pos.push_back({static_cast<std::uint16_t>(idx % n), static_cast<std::uint16_t>((idx / n) % n),
                   static_cast<std::uint16_t>(idx / (static_cast<std::size_t>(n) * n))});
  }
  std::sort(pos.begin(), pos.end(), canonical_less);
  std::normal_distribution<double> normal(0.0, 10.0);
  Matrix values(static_cast<Eigen::Index>(count), c);
  for (Eigen::Index k = 0; k < values.size(); ++k) values.data()[k] = static_cast<float>(normal(gen));
  return StructuredLatent::from_matrix(n, std::move(pos), std::move(values));
}

Outcome formats() {
  Outcome o;
  const auto golden_slat = oracle::golden_slat_bytes();
  const auto one = StructuredLatent::create(2, 1, {{{1, 0, 0}, {0.5}}});
  o.require(io::encode_slat(one) == golden_slat, "SLAT golden bytes");
  o.require(io::decode_slat(golden_slat) == one, "SLAT golden decode");
  auto golden_ffld = golden_slat;
  std::copy_n("FFLD", 4, golden_ffld.begin());
  const auto ffld = io::FeatureFile::bind(StructuredLatent::create(2, 1, {{{1, 0, 0}, {9.0}}}),
                                          FeatureField::create("f", Matrix::Constant(1, 1, 0.5)));
  o.require(io::encode_ffld(ffld) == golden_ffld, "FFLD golden bytes");
  o.require(io::decode_ffld(golden_ffld).field.features == ffld.field.features, "FFLD golden decode");

  std::mt19937_64 gen(42);
  int slat_ok = 0, ffld_ok = 0, ply_ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto latent = random_latent(gen);
    if (io::decode_slat(io::encode_slat(latent)) == latent) ++slat_ok;
    const auto file = io::FeatureFile::bind(latent, FeatureField::create("f", latent.latents()));
    const auto back = io::decode_ffld(io::encode_ffld(file));
    if (back.resolution == file.resolution && back.positions == file.positions &&
        back.field.features == file.field.features) {
      ++ffld_ok;
    }
    const auto check = oracle::check_ply(io::render_ply(latent.positions(), latent.resolution(), latent.latents()));
    if (check.ok && check.vertices == latent.size()) ++ply_ok;
  }
  o.require(slat_ok == 1000, "SLAT round trips " + std::to_string(slat_ok) + "/1000");
  o.require(ffld_ok == 1000, "FFLD round trips " + std::to_string(ffld_ok) + "/1000");
  o.require(ply_ok == 1000, "PLY grammar " + std::to_string(ply_ok) + "/1000");
  o.note("golden SLAT/FFLD " + std::to_string(golden_slat.size()) + " bytes, round trips " +
         std::to_string(slat_ok) + "+" + std::to_string(ffld_ok) + ", PLY grammar " + std::to_string(ply_ok) + "/1000");
  return o;
}

Outcome aggregation_fixture() {
  Outcome o;
  auto rec = [](std::string object, std::string view, std::map<std::string, int> ranks) {
    return RankingRecord{std::move(object), std::move(view), Criterion::overall, std::move(ranks)};
  };
  // Object 1 is ranked 1 and 3 in two views, object 2 is ranked 2: (2 + 2) / 2 = 2.
  const std::vector<RankingRecord> example{rec("o1", "v1", {{"A", 1}}), rec("o1", "v2", {{"A", 3}}),
                                           rec("o2", "v1", {{"A", 2}})};
  const double a = aggregate(example, Criterion::overall).at("A");
  o.require(a == 2.0, "two-level example gave " + fmt("%.17g", a));
  // Unequal view counts separate per-object from flat averaging: ((1+1+1)/3 + 3) / 2 = 2.
  const std::vector<RankingRecord> uneven{rec("o1", "v1", {{"A", 1}}), rec("o1", "v2", {{"A", 1}}),
                                          rec("o1", "v3", {{"A", 1}}), rec("o2", "v1", {{"A", 3}})};
  const double b = aggregate(uneven, Criterion::overall).at("A");
  o.require(b == 2.0, "uneven two-level example gave " + fmt("%.17g", b));

  std::vector<RankingRecord> records;
  for (int n = 0; n < 100; ++n) {
    const bool first = n < 11;
    records.push_back(RankingRecord{"o" + std::to_string(n), "v", Criterion::fidelity,
                                    {{"ours", first ? 1 : 2}, {"base", first ? 2 : 1}}});
  }
  const RankTable table{{Criterion::fidelity, aggregate(records, Criterion::fidelity)}};
  const auto text = render_table(table);
  o.require(format_rank(1.89) == "1.89", "format_rank(1.89) = " + format_rank(1.89));
  o.require(text.find("1.89") != std::string::npos, "table lacks 1.89");
  o.note("two-level means 2.00 and 2.00, table row 'ours' = " + format_rank(table.at(Criterion::fidelity).at("ours")));
  return o;
}

Outcome scale_invariance() {
  Outcome o;
  std::mt19937_64 gen(31);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    // At least two members per cluster, so every voxel has a positive.
    const std::uint32_t k = 2 + static_cast<std::uint32_t>(trial % 3);
    const Eigen::Index n = 2 * k + trial % 33;
    const Matrix x = oracle::random_matrix(n, 1 + trial % 8, gen);
    std::vector<std::uint32_t> labels(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint32_t>(i % k);
    std::shuffle(labels.begin(), labels.end(), gen);
    worst = std::max(worst, std::abs(structure_loss(3.0 * x, labels) - structure_loss(x, labels)));
  }
  o.require(worst < 1e-9, "max change " + fmt("%.3g", worst));
  o.note("200 instances, max change " + fmt("%.2e", worst));
  return o;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      "env -u FLOWGUIDE_SEED '" + std::string(FLOWGUIDE_CLI_PATH) + "' " + args + " >> '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome end_to_end_determinism() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / ("flowguide_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log = dir / "log.txt";
  auto q = [&](const std::string& p) { return "'" + (dir / p).string() + "'"; };
  o.require(run_cli("synth --preset chair --resolution 16 --channels 8 --seed 1 --out-dir " + q("query"), log) == 0,
            "synth query");
  o.require(run_cli("synth --preset table --resolution 16 --channels 8 --seed 2 --out-dir " + q("app"), log) == 0,
            "synth appearance");
  o.require(run_cli("cluster --features " + q("query/features.ffld") + " " + q("app/features.ffld") +
                        " --k 4 --seed 3 --out " + q("clusters.json"),
                    log) == 0,
            "cluster");
  o.require(run_cli("correspond --query-slat " + q("query/shape.slat") + " --query-features " +
                        q("query/features.ffld") + " --appearance-slat " + q("app/shape.slat") +
                        " --appearance-features " + q("app/features.ffld") + " --clusters " + q("clusters.json") +
                        " --out " + q("corr.json"),
                    log) == 0,
            "correspond");
  std::ofstream(dir / "config.json") << R"({"shape":"query/shape.slat",
    "field":{"kind":"gaussian","mean":[0.5,-0.3,0.0,0.1,0.2,-0.1,0.0,0.3],"std":0.5},
    "sampler":{"steps":50,"seed":11},
    "guidance":{"objective":"appearance","weight":1.0,"inner_steps":3},
    "appearance":{"slat":"app/shape.slat","correspondence":"corr.json"}})";
  for (const char* run : {"run1", "run2"}) {
    o.require(run_cli("transfer --config " + q("config.json") + " --out-dir " + q(run), log) == 0,
              std::string("transfer ") + run);
  }
  int identical = 0;
  for (const char* f : {"result.slat", "result.ply", "report.json"}) {
    const auto a = slurp(dir / "run1" / f);
    const auto b = slurp(dir / "run2" / f);
    if (!a.empty() && a == b) {
      ++identical;
    } else {
      o.require(false, std::string(f) + " differs or is empty");
    }
  }
  o.note(std::to_string(identical) + "/3 outputs byte-identical");
  if (o.pass) fs::remove_all(dir);
  else o.note("artifacts kept in " + dir.string());
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"analytic-flow fidelity", analytic_fidelity},
      {"zero-weight guidance equivalence", zero_weight_equivalence},
      {"guidance convergence", guidance_convergence},
      {"oracle equivalence", oracle_equivalence},
      {"CFM learnability", cfm_learnability},
      {"formats", formats},
      {"aggregation fixture", aggregation_fixture},
      {"structure-loss scale invariance", scale_invariance},
      {"end-to-end determinism", end_to_end_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.note(std::string("threw: ") + e.what());
    }
    if (!o.pass) ++failed;
    std::printf("criterion %2zu %-34s %s  %s\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
