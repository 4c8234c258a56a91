// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mmreg/dataset.hpp"
#include "mmreg/eval.hpp"
#include "mmreg/graphreg.hpp"
#include "mmreg/io.hpp"
#include "mmreg/learn.hpp"
#include "mmreg/mmreg.h"
#include "mmreg/synth.hpp"
#include "mmreg/workflows.hpp"

using namespace mmreg;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kSolverRatio = 1.05;
constexpr double kSolverBudgetS = 10.0;
constexpr double kLinearityTol = 1e-9;
constexpr double kBoundSlack = 1e-9;
constexpr double kRefineFactor = 0.7;
constexpr double kRefineTol = 1e-12;
constexpr double kSelfMeanMm = 0.5;
constexpr double kSelfBudgetS = 30.0;
constexpr double kTranslationErrMm = 2.5;
constexpr double kTranslationDiceBefore = 0.6;
constexpr double kTranslationDiceAfter = 0.90;
constexpr double kObjectiveEps = 1e-3;
constexpr double kConstraintTol = 1e-6;
constexpr double kOracleRel = 1e-12;
constexpr double kMaxMargin = 0.005;
constexpr double kMeanMargin = 0.02;
constexpr double kBenchmarkBudgetS = 900.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

Outcome make(bool pass, const char* fmt, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), fmt, args...);
    return {pass, buf};
}

fs::path work_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("mmreg_acceptance_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

Model default_model() {
    const TrainConfig t;
    return Model{WeightMatrix::single(default_metrics(), t.w0, t.wp0), {}, {}};
}

std::vector<Labeling> all_labelings(std::size_t nodes, std::size_t labels) {
    std::vector<Labeling> out;
    Labeling l(nodes, 0);
    while (true) {
        out.push_back(l);
        std::size_t i = 0;
        while (i < nodes && ++l[i] == static_cast<int>(labels)) l[i++] = 0;
        if (i == nodes) break;
    }
    return out;
}

// 2x3 grid, 4 labels, uniform unaries in [0, 10).
MrfInstance random_grid_instance(std::mt19937_64& rng, double wp) {
    std::uniform_real_distribution<double> u(0.0, 10.0), d(-3.0, 3.0);
    std::vector<Vec3> disp{{}};
    for (int l = 1; l < 4; ++l) disp.push_back({d(rng), d(rng), d(rng)});
    const LabelSpace ls(disp);
    const ControlGrid grid({2, 3, 1}, {1, 1, 1}, {});
    std::vector<double> unaries(grid.size() * ls.size());
    for (auto& x : unaries) x = u(rng);
    return make_instance(unaries, grid, ls, wp);
}

SegmentationMask random_mask(const Geometry& g, std::mt19937_64& rng, double p) {
    SegmentationMask m(g);
    std::bernoulli_distribution on(p);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = on(rng) ? 1 : 0;
    return m;
}

// One-sample class over a 2x3 grid with 4 labels and random features and masks.
TrainingSet tiny_set(std::mt19937_64& rng) {
    const Geometry geo{{8, 12, 1}, {1, 1, 1}, {}};
    TrainingSet set{ControlGrid{{2, 3, 1}, {4, 4, 4}, {1.5, 1.5, 0}},
                    LabelSpace{{{0, 0, 0}, {2, 0, 0}, {-1, 0, 0}, {0, 1, 0}}},
                    {}};
    TrainingSample s;
    s.name = "tiny";
    s.features.nodes = set.grid.size();
    s.features.labels = set.labels.size();
    s.features.metrics = 4;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    s.features.values.resize(s.features.nodes * s.features.labels * 4);
    for (double& v : s.features.values) v = u(rng);
    s.loss = loss_table(random_mask(geo, rng, 0.4), random_mask(geo, rng, 0.4), set.grid, set.labels);
    set.samples.push_back(std::move(s));
    return set;
}

std::vector<double> random_w(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 2.0);
    std::vector<double> w(5);
    for (double& v : w) v = u(rng);
    return w;
}

double class_dice(const SegmentationMask& a, const SegmentationMask& b, int c) { return exact_dice(a, b, c); }

Outcome solver_oracle() {
    std::mt19937_64 rng(1);
    const auto t0 = Clock::now();
    double worst = 0.0;
    int mismatched_zero = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const double wp = trial % 4 == 0 ? 0.0 : std::uniform_real_distribution<double>(0.05, 5.0)(rng);
        const MrfInstance m = random_grid_instance(rng, wp);
        const double e = m.energy(solve(m)), best = m.energy(solve_bruteforce(m));
        worst = std::max(worst, best > 0 ? e / best : (e > 0 ? INFINITY : 1.0));
        if (wp == 0.0 && e != best) ++mismatched_zero;
    }
    const double t = seconds_since(t0);
    return make(worst <= kSolverRatio && mismatched_zero == 0 && t < kSolverBudgetS,
                "worst ratio %.6f (<= %.2f), w_p=0 mismatches %d, %.2fs", worst, kSolverRatio, mismatched_zero, t);
}

Outcome energy_linearity() {
    std::mt19937_64 rng(2);
    double worst = 0.0;
    int unique = 0, argmin_changed = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const TrainingSet set = tiny_set(rng);
        const auto& s = set.samples.front();
        const auto w = random_w(rng);
        Labeling l(set.grid.size());
        for (int& v : l) v = static_cast<int>(rng() % set.labels.size());
        const MrfInstance m = class_instance(set, s, w);
        const double e = m.energy(l);
        worst = std::max(worst, std::abs(e - linear_energy(w, joint_feature(set, s, l))) / std::max(1.0, std::abs(e)));

        std::vector<double> energies;
        for (const auto& x : all_labelings(m.num_nodes, m.num_labels)) energies.push_back(m.energy(x));
        std::sort(energies.begin(), energies.end());
        if (energies[1] - energies[0] <= 1e-9 * std::max(1.0, std::abs(energies[0]))) continue;
        ++unique;
        const Labeling base = solve_bruteforce(m);
        for (double k : {0.25, 3.0, 40.0}) {
            auto wk = w;
            for (double& v : wk) v *= k;
            argmin_changed += solve_bruteforce(class_instance(set, s, wk)) != base;
        }
    }
    return make(worst < kLinearityTol && unique > 0 && argmin_changed == 0,
                "max relative gap %.3g (< %.0e), %d unique-optimum instances, %d argmin changes", worst,
                kLinearityTol, unique, argmin_changed);
}

Outcome diffeomorphism_bound() {
    const auto pair = synth_pair(SynthSpec{}, 31, 0);
    const auto out = register_pair(pair.source, pair.target, &pair.source_mask, default_model(), RegisterOptions{});
    double worst_excess = -INFINITY, worst_refine = 0.0;
    int refinements = 0;
    for (std::size_t k = 0; k < out.steps.size(); ++k) {
        const auto& d = out.steps[k];
        worst_excess = std::max(worst_excess, d.max_component_mm - 0.4 * d.spacing_mm);
        if (k > 0 && out.steps[k - 1].level == d.level) {
            ++refinements;
            worst_refine = std::max(worst_refine, std::abs(d.max_norm_mm - kRefineFactor * out.steps[k - 1].max_norm_mm) /
                                                      out.steps[k - 1].max_norm_mm);
        }
    }
    return make(out.steps.size() == 10 && worst_excess <= kBoundSlack && refinements == 8 && worst_refine <= kRefineTol,
                "%zu steps, max(component - 0.4*spacing) %.3g mm, %d refinements off by <= %.2g", out.steps.size(),
                worst_excess, refinements, worst_refine);
}

Outcome self_registration() {
    SynthSpec spec;
    spec.noise_sigma = 0.0;
    spec.remap = false;
    const auto p = synth_pair(spec, 41, 0);
    const auto t0 = Clock::now();
    const auto r = register_pair(p.source, p.source, &p.source_mask, default_model(), RegisterOptions{});
    const double t = seconds_since(t0);
    double mean = 0.0;
    for (const auto& v : r.field.values()) mean += v.norm();
    mean /= static_cast<double>(r.field.size());
    const auto warped = warp_mask(p.source_mask, DeformationField{{}, r.field});
    double worst_drop = 0.0;
    for (int c = 1; c <= spec.organs; ++c) {
        worst_drop = std::max(worst_drop, class_dice(p.source_mask, p.source_mask, c) - class_dice(warped, p.source_mask, c));
    }
    return make(mean < kSelfMeanMm && worst_drop <= 0.0 && t < kSelfBudgetS,
                "mean displacement %.4f mm (< %.1f), worst Dice drop %.4f, %.1fs at 64^3", mean, kSelfMeanMm,
                worst_drop, t);
}

Outcome translation_recovery() {
    SynthSpec spec;
    spec.deformation = GroundTruth::Translation;
    spec.translation_mm = {6, 0, 0};
    spec.organ_radius_min_mm = 8;
    spec.organ_radius_max_mm = 9;
    spec.remap = false;
    const auto p = synth_pair(spec, 51, 0);
    const auto r = register_pair(p.source, p.target, &p.source_mask, default_model(), RegisterOptions{});
    double err = 0.0;
    long n = 0;
    for (std::size_t i = 0; i < p.target_mask.size(); ++i) {
        if (!p.target_mask[i]) continue;
        err += (r.field[i] - p.ground_truth[i]).norm();
        ++n;
    }
    err /= static_cast<double>(std::max(1L, n));
    const auto warped = warp_mask(p.source_mask, DeformationField{{}, r.field});
    double worst_before = 0.0, worst_after = 1.0;
    for (int c = 1; c <= spec.organs; ++c) {
        worst_before = std::max(worst_before, class_dice(p.source_mask, p.target_mask, c));
        worst_after = std::min(worst_after, class_dice(warped, p.target_mask, c));
    }
    return make(n > 0 && err <= kTranslationErrMm && worst_before <= kTranslationDiceBefore &&
                    worst_after >= kTranslationDiceAfter,
                "foreground error %.3f mm (<= %.1f), organ Dice before <= %.3f, after >= %.3f", err,
                kTranslationErrMm, worst_before, worst_after);
}

Outcome loss_dice_consistency() {
    std::mt19937_64 rng(6);
    int mismatched = 0, count_mismatch = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const Geometry g{{7 + trial % 9, 5 + trial % 7, 3 + trial % 5}, {1.0, 1.5, 2.0}, {}};
        const ControlGrid grid = ControlGrid::covering(g, {3.0 + trial % 4, 4.0, 5.0});
        const double pa = trial % 10 == 0 ? 0.0 : 0.1 + 0.8 * ((trial * 7) % 10) / 10.0;
        const auto a = random_mask(g, rng, pa), b = random_mask(g, rng, 0.1 + 0.08 * (trial % 10));
        if (dice_loss(a, b, grid) != 1.0 - exact_dice(a, b)) ++mismatched;
        const LossTable t = loss_table(a, b, grid, LabelSpace({Vec3{}}));
        std::int64_t both = 0, sizes = 0, num = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            both += a[i] != 0 && b[i] != 0;
            sizes += (a[i] != 0) + (b[i] != 0);
        }
        for (std::size_t i = 0; i < t.nodes; ++i) num += t.overlap_at(i, 0);
        if (num != both || t.denom_zero != sizes) ++count_mismatch;
    }
    return make(mismatched == 0 && count_mismatch == 0,
                "50 mask pairs: %d loss mismatches, %d tile-count mismatches", mismatched, count_mismatch);
}

Outcome cccp_monotonicity() {
    SynthSpec spec;
    spec.dims = {32, 32, 32};
    spec.organ_radius_min_mm = 7;
    spec.organ_radius_max_mm = 9;
    spec.gt_amplitude_mm = 5;
    spec.pairs = 4;
    std::vector<LoadedPair> loaded;
    std::vector<std::string> names;
    for (const auto& p : synth_dataset(spec, 71)) {
        loaded.push_back({p.source, p.target, p.source_mask, p.target_mask});
        names.push_back("p" + std::to_string(names.size()));
    }
    PyramidConfig pc;
    pc.labels_per_level = 27;
    pc.finest_spacing_mm = 16;
    const auto prepared = prepare_training(loaded, names, default_metrics(), {}, pc);
    const TrainConfig cfg;
    int increases = 0, iterations = 0;
    double worst_violation = 0.0;
    for (std::size_t k = 0; k < prepared.sets.size(); ++k) {
        const auto r = train_class(prepared.sets[k], prepared.class_ids[k], cfg);
        for (std::size_t t = 0; t < r.history.size(); ++t) {
            ++iterations;
            worst_violation = std::max(worst_violation, r.history[t].max_violation);
            if (t == 0) continue;
            const double prev = r.history[t - 1].objective;
            increases += r.history[t].objective > prev + kObjectiveEps * std::max(1.0, std::abs(prev));
        }
    }
    return make(iterations > 0 && increases == 0 && worst_violation <= kConstraintTol,
                "%zu classes, %d CCCP iterations, %d objective increases, worst constraint residual %.3g (<= %.0e)",
                prepared.sets.size(), iterations, increases, worst_violation, kConstraintTol);
}

Outcome inference_oracle() {
    std::mt19937_64 rng(8);
    TrainConfig cfg;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const TrainingSet set = tiny_set(rng);
        const auto& s = set.samples.front();
        const auto w = random_w(rng);
        double best_imp = INFINITY, best_mv = INFINITY;
        for (const auto& l : all_labelings(set.grid.size(), set.labels.size())) {
            const double e = linear_energy(w, joint_feature(set, s, l));
            const double loss = separable_loss(s.loss, l);
            best_imp = std::min(best_imp, e + cfg.eta * loss);
            best_mv = std::min(best_mv, e - loss);
        }
        const Labeling imp = impute_latent(set, s, w, cfg);
        const double imp_e = linear_energy(w, joint_feature(set, s, imp)) + cfg.eta * separable_loss(s.loss, imp);
        const Constraint mv = most_violated(set, s, w, cfg);
        const double mv_e = linear_energy(w, mv.psi) - separable_loss(s.loss, mv.labeling);
        worst = std::max({worst, std::abs(imp_e - best_imp) / std::max(1.0, std::abs(best_imp)),
                          std::abs(mv_e - best_mv) / std::max(1.0, std::abs(best_mv))});
    }
    return make(worst <= kOracleRel, "50 instances, worst relative gap to enumeration %.3g (<= %.0e)", worst,
                kOracleRel);
}

Outcome benchmark_direction() {
    const auto dir = work_dir("benchmark");
    const auto t0 = Clock::now();
    SynthSpec train_spec;
    train_spec.pairs = 6;
    SynthSpec test_spec;
    test_spec.pairs = 8;
    const auto train_manifest = write_synth_dataset(train_spec, 101, dir / "train");
    const auto test_manifest = write_synth_dataset(test_spec, 202, dir / "test");
    const RunConfig config;
    run_train(config, train_manifest, dir / "model.txt");
    const Model learned = parse_model(read_text_file(dir / "model.txt"));
    std::vector<DatasetEntry> entries;
    for (const auto& e : read_manifest(test_manifest)) entries.push_back(resolve_entry(e, test_manifest.parent_path()));
    const auto report = run_benchmark(entries, benchmark_methods(learned), config.eval_options());
    const double t = seconds_since(t0);

    bool pass = t < kBenchmarkBudgetS;
    std::string detail;
    for (int organ = 1; organ <= test_spec.organs; ++organ) {
        double best = 0.0, mean = 0.0;
        for (const char* m : {"SAD", "MI", "NCC", "DWT"}) {
            const double v = report.mean_after(organ, m);
            best = std::max(best, v);
            mean += v / 4.0;
        }
        const double mw = report.mean_after(organ, "MW");
        pass = pass && mw >= best - kMaxMargin && mw >= mean + kMeanMargin;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "organ %d MW %.4f vs max %.4f, mean %.4f; ", organ, mw, best, mean);
        detail += buf;
    }
    fs::remove_all(dir);
    return make(pass, "%s%.0fs (< %.0f)", detail.c_str(), t, kBenchmarkBudgetS);
}

// synth -> train -> evaluate through the C API.
bool pipeline(const fs::path& dir, const std::vector<std::string>& overrides) {
    mmreg_config* c = nullptr;
    bool ok = mmreg_config_new(&c) == MMREG_OK;
    ok = ok && mmreg_config_override(c, "pyramid.labels_per_level=27") == MMREG_OK;
    for (const auto& o : overrides) ok = ok && mmreg_config_override(c, o.c_str()) == MMREG_OK;
    std::ofstream(dir.parent_path() / "spec.txt")
        << "dims=32,32,32\npairs=2\norgan_radius_min_mm=7\norgan_radius_max_mm=9\ngt_amplitude_mm=5\n";
    ok = ok && mmreg_synth((dir.parent_path() / "spec.txt").c_str(), 1234, (dir / "data").c_str()) == MMREG_OK;
    const auto manifest = (dir / "data" / "manifest.csv").string();
    const mmreg_status s = ok ? mmreg_train(c, manifest.c_str(), (dir / "model.txt").c_str()) : MMREG_ERR_INTERNAL;
    ok = ok && (s == MMREG_OK || s == MMREG_WARN_NOT_CONVERGED);
    ok = ok && mmreg_evaluate(c, manifest.c_str(), (dir / "model.txt").c_str(), (dir / "report.csv").c_str()) == MMREG_OK;
    if (!ok) std::fprintf(stderr, "pipeline failed: %s\n", mmreg_last_error());
    mmreg_config_free(c);
    return ok;
}

// Report text with the runtime column dropped.
std::string without_runtime(const std::string& csv) {
    std::string out;
    for (const auto& line : split(csv, '\n')) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
}

Outcome determinism() {
    const auto dir = work_dir("determinism");
    const std::vector<std::string> base{"threads=1", "eval.timing=0"};
    bool ran = pipeline(dir / "a", base) && pipeline(dir / "b", base) &&
               pipeline(dir / "c", {"threads=2", "eval.timing=0"}) && pipeline(dir / "d", {"threads=1", "eval.timing=1"});
    if (!ran) return make(false, "pipeline error: %s", mmreg_last_error());
    auto same = [&](const char* x, const char* y, const char* file) { return slurp(dir / x / file) == slurp(dir / y / file); };
    const bool data = same("a", "b", "data/pair001_target.raw") && same("a", "b", "data/manifest.csv");
    const bool serial = same("a", "b", "model.txt") && same("a", "b", "model.txt.log") && same("a", "b", "report.csv") &&
                        same("a", "b", "report_summary.csv");
    const bool threaded = same("a", "c", "model.txt") && same("a", "c", "report.csv") &&
                          same("a", "c", "report_summary.csv");
    const bool timed = without_runtime(slurp(dir / "a" / "report.csv")) == without_runtime(slurp(dir / "d" / "report.csv"));
    const bool nonempty = !slurp(dir / "a" / "report.csv").empty();
    fs::remove_all(dir);
    return make(data && serial && threaded && timed && nonempty,
                "synth %s, 1-thread reruns %s, 2 vs 1 threads %s, timed run numerics %s", data ? "identical" : "DIFFER",
                serial ? "byte-identical" : "DIFFER", threaded ? "identical" : "DIFFER", timed ? "identical" : "DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "solver matches exhaustive search", solver_oracle},
        {2, "energy is linear in the weights", energy_linearity},
        {3, "displacement bound and label refinement", diffeomorphism_bound},
        {4, "self-registration stays put", self_registration},
        {5, "translation recovery", translation_recovery},
        {6, "tile loss equals one minus Dice", loss_dice_consistency},
        {7, "CCCP objective and constraints", cccp_monotonicity},
        {8, "loss-augmented inference matches enumeration", inference_oracle},
        {9, "learned weights beat single metrics", benchmark_direction},
        {10, "deterministic pipeline", determinism},
    };
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("[%s] %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
