// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "atsc/harness.hpp"
#include "gradcheck.hpp"
#include "scenarios.hpp"

using namespace atsc;
using namespace atsc::test;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTol = 1e-6;
constexpr double kReductionTol = 1e-12;
constexpr double kGradBudgetS = 60;
constexpr double kSmokeBudgetS = 600;
constexpr double kSweepBudgetS = 900;
constexpr int kPairedSeeds = 5;
constexpr int kRequiredWins = 4;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int n, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] %d. %s: %s\n", ok ? "PASS" : "FAIL", n, name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::size_t largest = 0;
  std::string worst_name;
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    for (const auto& c : {grad_step1<double>(seed), grad_step2_teacher<double>(seed), grad_step2_student<double>(seed),
                          grad_mt_step1<double>(seed)}) {
      largest = std::max(largest, c.model_params);
      if (c.report.max_rel >= worst) {
        worst = c.report.max_rel;
        worst_name = c.name;
      }
    }
  const double t = seconds_since(t0);
  report(1, "gradient correctness", worst < kGradTol && largest < 1000 && t < kGradBudgetS,
         "max rel err " + sci(worst) + " (" + worst_name + "), largest model " + std::to_string(largest) +
             " params, " + sci(t) + " s");
}

void criterion_isolation() {
  std::size_t steps = 0, violations = 0;
  std::string first;
  for (auto mode : kAllModes)
    for (std::uint64_t seed : {1u, 2u}) {
      const auto rep = check_isolation(mode, 20, seed);
      steps += rep.steps;
      violations += rep.violations.size();
      if (first.empty() && !rep.violations.empty()) first = rep.violations.front();
    }
  report(2, "step isolation", violations == 0,
         std::to_string(steps) + " steps over " + std::to_string(std::size(kAllModes)) + " modes, " +
             std::to_string(violations) + " out-of-group changes" + (first.empty() ? "" : " (" + first + ")"));
}

void criterion_simkd() {
  double gap = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    for (double alpha : {0.0, 1.0, 10.0}) gap = std::max(gap, simkd_reduction_gap(seed, 5, alpha));
  report(3, "SimKD reduction", gap <= kReductionTol, "max loss/parameter deviation " + sci(gap));
}

void criterion_multi() {
  double single = 0, copies = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    single = std::max(single, multi_single_gap(seed, 10, 0.5));
    for (std::size_t n : {2u, 3u, 5u}) copies = std::max(copies, multi_copies_gap(seed, n, 0.5));
  }
  report(4, "multi-teacher degeneracy", single <= kReductionTol && copies <= kReductionTol,
         "N=1 vs single-teacher " + sci(single) + ", N copies vs N x single " + sci(copies) + " (rel)");
}

std::size_t projector_oracle(std::size_t cs, std::size_t ct, std::size_t r) {
  const std::size_t hid = ct / r;
  const std::size_t ks[3] = {1, 3, 1}, cin[3] = {cs, hid, hid}, cout[3] = {hid, hid, ct};
  std::size_t n = 0;
  for (int i = 0; i < 3; ++i) n += ks[i] * ks[i] * cin[i] * cout[i] + 2 * cout[i];
  return n;
}

void criterion_projector() {
  std::mt19937_64 rng(2024);
  ScopedWarningSink quiet([](const std::string&) {});
  int mismatches = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t cs = 1 + rng() % 64, ct = 1 + rng() % 128, r = 1 + rng() % ct;
    Projector<double> p(cs, ct, r);
    const auto plan = p.plan();
    std::size_t enumerated = 0;
    for (const auto* prm : p.params()) enumerated += prm->value.size();
    const bool ok = plan[0].ch_in == cs && plan[0].ch_out == ct / r && plan[1].ch_in == ct / r &&
                    plan[1].ch_out == ct / r && plan[2].ch_in == ct / r && plan[2].ch_out == ct &&
                    plan[0].kernel == 1 && plan[1].kernel == 3 && plan[2].kernel == 1 &&
                    enumerated == projector_oracle(cs, ct, r) && projector_param_count(cs, ct, r) == enumerated;
    PartCounts parts;
    parts.teacher = 1000 + t;
    parts.classifier = 10 * (t + 1);
    parts.student = 50;
    parts.projector = enumerated;
    const auto rep = count_params(parts);
    const double expected = 100.0 * static_cast<double>(enumerated) / static_cast<double>(1000 + t + 10 * (t + 1));
    mismatches += !(ok && rep.projector == enumerated && rep.increase_percent == expected);
  }
  report(5, "projector accounting", mismatches == 0, std::to_string(mismatches) + "/50 triples disagree with oracle");
}

void criterion_lr() {
  OptimConfig o;  // defaults: 0.05, milestones 150/180/210, factor 0.1, 240 epochs
  const std::pair<int, double> expect[] = {{0, 0.05},     {149, 0.05},     {150, 0.005},  {179, 0.005},
                                           {180, 0.0005}, {209, 0.0005},   {210, 0.00005}, {239, 0.00005}};
  std::string bad;
  for (auto [e, v] : expect)
    if (lr_at(e, o) != v) bad += " epoch " + std::to_string(e) + "=" + sci(lr_at(e, o));
  report(6, "LR schedule", bad.empty(), bad.empty() ? "exact at 0/149/150/179/180/209/210/239" : "mismatch:" + bad);
}

// Mixture-of-modes synthetic task where a wide teacher beats a narrow student.
struct Scenario {
  DatasetSpec data;
  Dataset<double> ds;
  EncoderSpec teacher, student;
  OptimConfig optim;
};

Scenario distill_scenario(int epochs) {
  Scenario s;
  s.data.modes_per_class = 4;
  s.data.separation = 5.0;
  s.ds = load_dataset<double>(s.data);
  s.teacher = mlp_spec(s.data.dims, {64, 32});
  s.student = mlp_spec(s.data.dims, {8});
  s.optim.base_lr = 0.05;
  s.optim.epochs = epochs;
  s.optim.milestones = {epochs * 2 / 3, epochs * 5 / 6};
  return s;
}

PretrainResult<double> pretrain(const Scenario& s, std::uint64_t seed) {
  PretrainConfig pc;
  pc.dataset = s.data;
  pc.model = s.teacher;
  pc.optim = s.optim;
  pc.seed = seed;
  return pretrain_teacher<double>(pc, s.ds);
}

RunRecord distill(const Scenario& s, const PretrainResult<double>& t, TrainMode mode, std::uint64_t seed,
                  double alpha, int epochs) {
  ModelSetup<double> ms;
  ms.teachers = {t.encoder};
  ms.classifiers = {t.classifier};
  ms.student_spec = s.student;
  ms.num_classes = s.data.num_classes;
  ms.reduction = 1;
  RunConfig rc;
  rc.mode = mode;
  rc.dataset = s.data;
  rc.optim = s.optim;
  rc.optim.epochs = epochs;
  rc.optim.milestones = {epochs * 2 / 3, epochs * 5 / 6};
  rc.seed = seed;
  rc.alpha = alpha;
  rc.deterministic = true;
  auto st = init_state<double>(mode, ms, seed, rc.optim);
  return train_state(st, s.ds, rc);
}

std::vector<PretrainResult<double>> teachers;

// Swallows the progress lines the CLI verbs write to std::cout / std::cerr.
struct Silence {
  std::ostringstream sink;
  std::streambuf* out = std::cout.rdbuf(sink.rdbuf());
  std::streambuf* err = std::cerr.rdbuf(sink.rdbuf());
  ~Silence() {
    std::cout.rdbuf(out);
    std::cerr.rdbuf(err);
  }
};

void criterion_smoke() {
  const auto t0 = Clock::now();
  const auto s = distill_scenario(100);
  int wins = 0;
  std::string detail;
  for (int seed = 0; seed < kPairedSeeds; ++seed) {
    teachers.push_back(pretrain(s, seed));
    const double a = distill(s, teachers.back(), TrainMode::ATSC, seed, 1000.0, 100).student_top1;
    const double b = distill(s, teachers.back(), TrainMode::STANDALONE_STUDENT, seed, 1000.0, 100).student_top1;
    wins += a >= b;
    detail += " " + sci(a) + "/" + sci(b);
  }
  const double t = seconds_since(t0);
  report(7, "distillation smoke test", wins >= kRequiredWins && t < kSmokeBudgetS,
         "ATSC >= standalone in " + std::to_string(wins) + "/" + std::to_string(kPairedSeeds) + " seeds (top-1" +
             detail + "), " + sci(t) + " s");
}

void criterion_alpha_sweep() {
  const auto t0 = Clock::now();
  const auto s = distill_scenario(30);
  int monotone = 0;
  std::string detail;
  for (int seed = 0; seed < kPairedSeeds; ++seed) {
    if (teachers.size() <= static_cast<std::size_t>(seed)) teachers.push_back(pretrain(distill_scenario(100), seed));
    std::vector<double> drift;
    for (double alpha : {0.1, 1.0, 10.0}) drift.push_back(distill(s, teachers[seed], TrainMode::ATSC, seed, alpha, 30).drift.back());
    monotone += drift[0] > drift[1] && drift[1] > drift[2];
    detail += " [" + sci(drift[0]) + " " + sci(drift[1]) + " " + sci(drift[2]) + "]";
  }
  const double t = seconds_since(t0);
  report(8, "alpha sweep", monotone >= kRequiredWins && t < kSweepBudgetS,
         "drift strictly decreasing in " + std::to_string(monotone) + "/" + std::to_string(kPairedSeeds) +
             " seeds" + detail + ", " + sci(t) + " s");
}

json small_dataset() {
  return {{"kind", "synthetic"}, {"num_classes", 3}, {"dims", 6}, {"train_size", 120}, {"test_size", 30}, {"seed", 3}};
}

json small_train(const fs::path& teacher, double alpha, double lr) {
  return {{"schema", 1},
          {"mode", "ATSC"},
          {"seed", 0},
          {"alpha", alpha},
          {"dataset", small_dataset()},
          {"teachers", json::array({json{{"checkpoint", teacher.string()}}})},
          {"student", {{"type", "mlp"}, {"widths", {5}}}},
          {"optim", {{"lr", lr}, {"epochs", 3}, {"milestones", {2}}, {"batch_size", 16}}}};
}

fs::path write_json(const fs::path& f, const json& j) {
  std::ofstream(f) << j.dump(2);
  return f;
}

CliOptions cli(const fs::path& config, const fs::path& out) {
  CliOptions o;
  o.config = config.string();
  o.out = out.string();
  o.deterministic = true;
  return o;
}

fs::path pretrained_teacher(const fs::path& root) {
  json p{{"schema", 1},
         {"seed", 0},
         {"dataset", small_dataset()},
         {"teacher", {{"type", "mlp"}, {"widths", {12, 8}}}},
         {"optim", {{"lr", 0.05}, {"epochs", 4}, {"milestones", json::array()}, {"batch_size", 16}}}};
  const auto cfg = write_json(root / "pretrain.json", p);
  if (guarded([&] { return cmd_pretrain(cli(cfg, root / "teacher")); }) != kExitOk)
    throw Error("teacher pretraining failed");
  return root / "teacher";
}

void criterion_determinism(const fs::path& root, const fs::path& teacher) {
  const auto cfg = write_json(root / "det.json", small_train(teacher, 1.0, 0.05));
  const int a = guarded([&] { return cmd_train(cli(cfg, root / "det_a")); });
  const int b = guarded([&] { return cmd_train(cli(cfg, root / "det_b")); });
  const auto ma = slurp(root / "det_a" / "metrics.csv");
  const auto mb = slurp(root / "det_b" / "metrics.csv");
  report(9, "determinism", a == kExitOk && b == kExitOk && !ma.empty() && ma == mb,
         std::to_string(ma.size()) + " vs " + std::to_string(mb.size()) + " bytes, " +
             (ma == mb ? "identical" : "different"));
}

void criterion_divergence(const fs::path& root, const fs::path& teacher) {
  const auto cfg = write_json(root / "div.json", small_train(teacher, 1e6, 0.5));
  const int code = guarded([&] { return cmd_train(cli(cfg, root / "div")); });
  const auto summary = json::parse(std::ifstream(root / "div" / "summary.json"));
  bool checkpoint_ok = false;
  try {
    Checkpoint<double> ck(root / "div" / "checkpoint");
    ck.encoder("student");
    checkpoint_ok = ck.manifest().at("epoch") == summary.at("last_good_epoch");
  } catch (const std::exception&) {
  }

  json sweep{{"schema", 1},
             {"base", small_train(teacher, 1.0, 0.5)},
             {"param", "alpha"},
             {"values", {0.1, 1.0, 1e6}},
             {"seeds", 2}};
  const auto scfg = write_json(root / "sweep.json", sweep);
  const int scode = guarded([&] { return cmd_sweep(cli(scfg, root / "sweep")); });
  const auto csv = slurp(root / "sweep" / "sweep.csv");
  const bool others_ok =
      csv.find("alpha,0.1,2,0,0,ok,") != std::string::npos && csv.find("alpha,1,2,0,0,ok,") != std::string::npos;
  const bool flagged = csv.find("alpha,1000000,2,2,0,diverged,") != std::string::npos;
  report(10, "divergence handling",
         code == kExitDiverged && summary.at("status") == "diverged" && checkpoint_ok && scode == kExitOk &&
             others_ok && flagged,
         "exit " + std::to_string(code) + ", last good epoch " + summary.value("last_good_epoch", json(-2)).dump() +
             (checkpoint_ok ? " (checkpoint loads)" : " (checkpoint missing)") + ", sweep " +
             (others_ok && flagged ? "completed other cells" : "incomplete"));
}

}  // namespace

int main() {
  ScopedWarningSink quiet([](const std::string&) {});
  const auto root = fs::temp_directory_path() / ("atsc_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);

  criterion_gradients();
  criterion_isolation();
  criterion_simkd();
  criterion_multi();
  criterion_projector();
  criterion_lr();
  criterion_smoke();
  criterion_alpha_sweep();
  try {
    Silence s;  // report() goes through stdio and still prints
    const auto teacher = pretrained_teacher(root);
    criterion_determinism(root, teacher);
    criterion_divergence(root, teacher);
  } catch (const std::exception& e) {
    report(9, "CLI criteria", false, e.what());
  }
  fs::remove_all(root);
  std::printf("%d/10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
