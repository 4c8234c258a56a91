#include "mmreg/config.hpp"

#include <functional>
#include <map>

#include "mmreg/io.hpp"

namespace mmreg {

namespace {

struct Key {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename Ref>
Key real(Ref ref) {
    return {[ref](RunConfig& c, const std::string& v) { ref(c) = parse_number(v, ErrorKind::Config); },
            [ref](const RunConfig& c) { return format_number(ref(c)); }};
}

template <typename Ref>
Key integer(Ref ref) {
    return {[ref](RunConfig& c, const std::string& v) {
                const long x = parse_integer(v, ErrorKind::Config);
                if (x < -1000000000L || x > 1000000000L) throw Error(ErrorKind::Config, "integer out of range");
                ref(c) = static_cast<int>(x);
            },
            [ref](const RunConfig& c) { return std::to_string(ref(c)); }};
}

template <typename Ref>
Key flag(Ref ref) {
    return {[ref](RunConfig& c, const std::string& v) {
                if (v != "0" && v != "1") throw Error(ErrorKind::Config, "expected 0 or 1");
                ref(c) = v == "1";
            },
            [ref](const RunConfig& c) { return std::string(ref(c) ? "1" : "0"); }};
}

std::string join_numbers(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_number(v[i]);
    return out;
}

const std::map<std::string, Key, std::less<>>& keys() {
    static const std::map<std::string, Key, std::less<>> table = {
        {"pyramid.levels", integer([](auto& c) -> auto& { return c.pyramid.levels; })},
        {"pyramid.steps_per_level", integer([](auto& c) -> auto& { return c.pyramid.steps_per_level; })},
        {"pyramid.labels_per_level", integer([](auto& c) -> auto& { return c.pyramid.labels_per_level; })},
        {"pyramid.finest_spacing_mm", real([](auto& c) -> auto& { return c.pyramid.finest_spacing_mm; })},
        {"pyramid.bound_factor", real([](auto& c) -> auto& { return c.pyramid.bound_factor; })},
        {"pyramid.refine_factor", real([](auto& c) -> auto& { return c.pyramid.refine_factor; })},
        {"metrics",
         {[](RunConfig& c, const std::string& v) {
              std::vector<MetricId> ids;
              for (const auto& part : split(v, ',')) {
                  const auto id = metric_from_name(trim(part));
                  if (!id) throw Error(ErrorKind::Config, "unknown metric '" + std::string(trim(part)) + "'");
                  ids.push_back(*id);
              }
              c.metrics = ids;
          },
          [](const RunConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.metrics.size(); ++i) out += (i ? "," : "") + std::string(metric_name(c.metrics[i]));
              return out;
          }}},
        {"metric.mi_bins", integer([](auto& c) -> auto& { return c.metric.mi_bins; })},
        {"metric.worst_value", real([](auto& c) -> auto& { return c.metric.worst_value; })},
        {"solver.max_cycles", integer([](auto& c) -> auto& { return c.solver.max_cycles; })},
        {"solver.message_iterations", integer([](auto& c) -> auto& { return c.solver.message_iterations; })},
        {"train.C", real([](auto& c) -> auto& { return c.train.C; })},
        {"train.alpha", real([](auto& c) -> auto& { return c.train.alpha; })},
        {"train.eta", real([](auto& c) -> auto& { return c.train.eta; })},
        {"train.w0",
         {[](RunConfig& c, const std::string& v) {
              std::vector<double> w;
              for (const auto& part : split(v, ',')) w.push_back(parse_number(trim(part), ErrorKind::Config));
              c.train.w0 = w;
              c.w0_set = true;
          },
          [](const RunConfig& c) { return join_numbers(c.train_config().w0); }}},
        {"train.wp0", real([](auto& c) -> auto& { return c.train.wp0; })},
        {"train.epsilon", real([](auto& c) -> auto& { return c.train.epsilon; })},
        {"train.slack_tolerance", real([](auto& c) -> auto& { return c.train.slack_tolerance; })},
        {"train.max_outer", integer([](auto& c) -> auto& { return c.train.max_outer; })},
        {"train.max_inner", integer([](auto& c) -> auto& { return c.train.max_inner; })},
        {"train.qp_max_iterations", integer([](auto& c) -> auto& { return c.train.qp_max_iterations; })},
        {"train.qp_tolerance", real([](auto& c) -> auto& { return c.train.qp_tolerance; })},
        {"eval.timing", flag([](auto& c) -> auto& { return c.eval_timing; })},
        {"eval.overlays", flag([](auto& c) -> auto& { return c.eval_overlays; })},
        {"seed",
         {[](RunConfig& c, const std::string& v) {
              const long x = parse_integer(v, ErrorKind::Config);
              if (x < 0) throw Error(ErrorKind::Config, "must be >= 0");
              c.seed = static_cast<std::uint64_t>(x);
          },
          [](const RunConfig& c) { return std::to_string(c.seed); }}},
        {"threads", integer([](auto& c) -> auto& { return c.threads; })},
    };
    return table;
}

}  // namespace

double default_weight(MetricId id) { return id == MetricId::SAD ? 0.1 : 10.0; }

void RunConfig::set(std::string_view key, std::string_view value) {
    const auto it = keys().find(key);
    if (it == keys().end()) throw Error(ErrorKind::Config, "unknown config key '" + std::string(key) + "'");
    try {
        it->second.set(*this, std::string(trim(value)));
    } catch (const Error& e) {
        throw Error(ErrorKind::Config, std::string(key) + ": " + e.what());
    }
}

std::string RunConfig::get(std::string_view key) const {
    const auto it = keys().find(key);
    if (it == keys().end()) throw Error(ErrorKind::Config, "unknown config key '" + std::string(key) + "'");
    return it->second.get(*this);
}

void RunConfig::validate() const {
    pyramid.validate();
    if (metrics.empty()) throw Error(ErrorKind::Config, "metrics must name at least one metric");
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (metrics[i] == metrics[j]) throw Error(ErrorKind::Config, "metrics lists a metric twice");
        }
    }
    if (metric.mi_bins < 2) throw Error(ErrorKind::Config, "metric.mi_bins must be >= 2");
    if (!(metric.worst_value >= 0.0)) throw Error(ErrorKind::Config, "metric.worst_value must be >= 0");
    if (solver.max_cycles < 1) throw Error(ErrorKind::Config, "solver.max_cycles must be >= 1");
    if (solver.message_iterations < 0) throw Error(ErrorKind::Config, "solver.message_iterations must be >= 0");
    if (threads < 1) throw Error(ErrorKind::Config, "threads must be >= 1");
    train_config().validate(metrics.size());
}

std::string RunConfig::dump() const {
    std::string out;
    for (const auto& [k, key] : keys()) out += k + "=" + key.get(*this) + "\n";
    return out;
}

RegisterOptions RunConfig::register_options() const {
    RegisterOptions o;
    o.pyramid = pyramid;
    o.metric_settings = metric;
    o.solver = solver;
    o.threads = threads;
    return o;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t = train;
    if (!w0_set) {
        t.w0.clear();
        for (auto id : metrics) t.w0.push_back(default_weight(id));
    }
    t.solver = solver;
    t.threads = threads;
    return t;
}

EvalOptions RunConfig::eval_options() const {
    EvalOptions o;
    o.registration = register_options();
    o.threads = threads;
    o.timing = eval_timing;
    return o;
}

std::vector<std::string> run_config_keys() {
    std::vector<std::string> out;
    for (const auto& [k, key] : keys()) out.push_back(k);
    return out;
}

void apply_config_text(RunConfig& config, std::string_view text, std::string_view origin) {
    int line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorKind::Config, std::string(origin) + ":" + std::to_string(line_no) + ": expected key=value");
        }
        try {
            config.set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const Error& e) {
            throw Error(ErrorKind::Config, std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void apply_override(RunConfig& config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw Error(ErrorKind::Config, "override '" + std::string(assignment) + "' is not key=value");
    }
    config.set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    RunConfig c;
    if (!file.empty()) apply_config_text(c, read_text_file(file), file.string());
    for (const auto& o : overrides) apply_override(c, o);
    c.validate();
    return c;
}

}  // namespace mmreg
