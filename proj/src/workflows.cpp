#include "mmreg/workflows.hpp"

#include <sstream>

#include "mmreg/dataset.hpp"
#include "mmreg/eval.hpp"
#include "mmreg/io.hpp"
#include "mmreg/learn.hpp"
#include "mmreg/synth.hpp"

namespace mmreg {

namespace fs = std::filesystem;

namespace {

fs::path sibling(const fs::path& path, const std::string& suffix) {
    return path.parent_path() / (path.stem().string() + suffix);
}

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

}  // namespace

bool run_register(const RunConfig& config, const RegisterPaths& paths) {
    config.validate();
    const Volume source = read_volume(paths.source);
    const Volume target = read_volume(paths.target);
    std::optional<SegmentationMask> source_mask;
    if (!paths.source_mask.empty()) {
        source_mask = read_mask(paths.source_mask);
        check_mask_alignment(*source_mask, source.geometry());
    }
    const Model model = parse_model(read_text_file(paths.weights));
    const auto result =
        register_pair(source, target, source_mask ? &*source_mask : nullptr, model, config.register_options());
    const DeformationField field{{}, result.field};

    ensure_parent(paths.out_field);
    ensure_parent(paths.out_warped);
    write_field(paths.out_field, result.field);
    const Volume warped = warp_clamped(source, field, config.threads);
    write_volume(paths.out_warped, warped);
    const fs::path diagnostics =
        paths.out_diagnostics.empty() ? sibling(paths.out_field, "_diagnostics.txt") : paths.out_diagnostics;
    ensure_parent(diagnostics);
    write_text_file(diagnostics, format_diagnostics(result.steps));

    if (!paths.out_overlays.empty()) {
        SegmentationMask target_mask(target.geometry());
        if (!paths.target_mask.empty()) {
            target_mask = read_mask(paths.target_mask);
            check_mask_alignment(target_mask, target.geometry());
        }
        const SegmentationMask warped_mask =
            source_mask ? warp_mask(*source_mask, field) : SegmentationMask(target.geometry());
        emit_overlays(target, warped, target_mask, warped_mask, paths.out_overlays, "register");
    }
    return true;
}

bool run_train(const RunConfig& config, const fs::path& dataset, const fs::path& out_model) {
    config.validate();
    const auto entries = read_manifest(dataset);
    std::vector<LoadedPair> pairs;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        pairs.push_back(load_pair(entries[i]));
        names.push_back(pair_label(entries[i], i));
    }
    const auto prepared =
        prepare_training(pairs, names, config.metrics, config.metric, config.pyramid, config.threads);
    const auto trained = train_model(prepared, config.metrics, config.train_config());

    std::ostringstream log;
    log << "pairs=" << pairs.size() << " classes=";
    for (std::size_t k = 0; k < prepared.class_ids.size(); ++k) log << (k ? "," : "") << prepared.class_ids[k];
    log << '\n';
    for (std::size_t k = 0; k < prepared.class_ids.size(); ++k) {
        for (const auto& name : prepared.skipped[k]) {
            log << "class=" << prepared.class_ids[k] << " skipped pair=" << name << " reason=class absent from a mask\n";
        }
    }
    log << format_training_log(trained.results);

    ensure_parent(out_model);
    write_text_file(out_model, serialize_model(trained.model));
    write_text_file(out_model.string() + ".log", log.str());
    return trained.converged;
}

bool run_evaluate(const RunConfig& config, const fs::path& dataset, const fs::path& model, const fs::path& out_report) {
    config.validate();
    const auto entries = read_manifest(dataset);
    const Model learned = parse_model(read_text_file(model));
    EvalOptions options = config.eval_options();
    if (config.eval_overlays) options.overlay_dir = sibling(out_report, "_overlays");
    const auto report = run_benchmark(entries, benchmark_methods(learned), options);
    ensure_parent(out_report);
    write_text_file(out_report, format_report_csv(report));
    write_text_file(sibling(out_report, "_summary.csv"), format_summary_csv(report));
    write_text_file(sibling(out_report, "_skipped.csv"), format_skipped_csv(report));
    return true;
}

fs::path run_synth(const fs::path& spec, std::uint64_t seed, const fs::path& out_dir) {
    const SynthSpec s = spec.empty() ? SynthSpec{} : parse_synth_spec(read_text_file(spec));
    return write_synth_dataset(s, seed, out_dir);
}

void dump_config(const RunConfig& config, const fs::path& dir) {
    fs::create_directories(dir.empty() ? fs::path(".") : dir);
    write_text_file(dir / "resolved_config.txt", config.dump());
}

}  // namespace mmreg
