#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdsr/guidance.hpp"
#include "gdsr/io.hpp"

namespace gdsr {

/// Parse or validation failure.  `line` is 0 when the error is not tied to a line.
struct ConfigError : std::runtime_error {
    ConfigError(const std::string& what, std::size_t line_no = 0)
        : std::runtime_error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + what : what), line(line_no)
    {
    }
    std::size_t line;
};

/// `[section]` headers and `key = value` lines; `#` and `;` start comments.
struct IniDocument {
    struct Entry {
        std::string value;
        std::size_t line = 0;
    };
    std::map<std::string, std::map<std::string, Entry>> sections;
};

namespace detail {

inline std::string trim(std::string_view s)
{
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

} // namespace detail

inline IniDocument parse_ini(std::istream& in)
{
    IniDocument doc;
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto cut = raw.find_first_of("#;");
        const std::string line = detail::trim(cut == std::string::npos ? raw : raw.substr(0, cut));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) throw ConfigError("malformed section header '" + line + "'", line_no);
            section = detail::trim(line.substr(1, line.size() - 2));
            doc.sections[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + line + "'", line_no);
        if (section.empty()) throw ConfigError("key outside of any [section]", line_no);
        const std::string key = detail::trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("empty key", line_no);
        auto& entries = doc.sections[section];
        if (entries.count(key) != 0)
            throw ConfigError("duplicate key '" + section + "." + key + "' (first on line " +
                                  std::to_string(entries[key].line) + ")",
                              line_no);
        entries[key] = {detail::trim(line.substr(eq + 1)), line_no};
    }
    return doc;
}

enum class ToyKind { faces, two_mode };

/// Everything needed to rerun a sweep: problem, sampler grid, chains and outputs.
struct ExperimentConfig {
    // [problem]
    ToyKind toy = ToyKind::faces;
    std::string prior_file;  // optional mixture file replacing the toy prior
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t factor = 4;
    std::size_t embedding_dim = 16;
    double sigma_y = 0.0;
    std::uint64_t problem_seed = 0;
    std::optional<double> temperature;
    bool prompt = true;  // false: sample without the toy's prompt embedding

    // [sampler]
    std::vector<Method> methods{Method::ddnm};
    std::vector<int> steps{100};
    std::vector<double> cfg_scales{1.0};
    std::vector<double> rhos{1.0};
    std::optional<StepSizeMode> step_mode;  // unset: per-method default
    int t_stop = 1000;
    bool pinv_init = true;
    GradientMode gradient = GradientMode::automatic;

    // [cascade]
    bool cascade = false;
    std::size_t stage_factor = 2;
    int stage1_steps = 200;
    int stage2_steps = 50;
    double detail_variance = 0.002;
    std::vector<double> lambdas{0.0};

    // [run]
    std::size_t chains = 4;
    std::uint64_t seed = 0;
    std::size_t threads = 0;  // 0: hardware concurrency
    std::string out = "results";
    bool save_samples = true;

    bool operator==(const ExperimentConfig&) const = default;

    void validate() const
    {
        auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
        if (height == 0 || width == 0) fail("problem.height", "image must be non-empty");
        if (factor == 0 || height % factor != 0 || width % factor != 0)
            fail("problem.factor", "must divide height and width");
        if (embedding_dim == 0) fail("problem.embedding_dim", "must be >= 1");
        if (!(sigma_y >= 0.0)) fail("problem.sigma_y", "must be >= 0");
        if (temperature && !(*temperature > 0.0)) fail("problem.temperature", "must be > 0");
        if (methods.empty()) fail("sampler.methods", "grid is empty");
        if (steps.empty()) fail("sampler.steps", "grid is empty");
        if (cfg_scales.empty()) fail("sampler.cfg_scale", "grid is empty");
        if (rhos.empty()) fail("sampler.rho", "grid is empty");
        if (lambdas.empty()) fail("cascade.lambda_avg", "grid is empty");
        if (t_stop < 1 || t_stop > 1000) fail("sampler.t_stop", "must lie in [1, 1000]");
        for (int s : steps)
            if (s < 1 || s > t_stop) fail("sampler.steps", "each value must lie in [1, t_stop]");
        for (double r : rhos)
            if (!(r >= 0.0)) fail("sampler.rho", "must be >= 0");
        for (double l : lambdas)
            if (!(l >= 0.0 && l <= 1.0)) fail("cascade.lambda_avg", "must lie in [0, 1]");
        for (Method m : methods)
            if (m == Method::ddnm_plus && sigma_y == 0.0) fail("sampler.methods", "ddnm_plus needs sigma_y > 0");
        if (cascade) {
            if (stage_factor == 0 || height % stage_factor != 0 || width % stage_factor != 0)
                fail("cascade.stage_factor", "must divide height and width");
            if (factor % stage_factor != 0) fail("cascade.stage_factor", "must divide problem.factor");
            if (stage1_steps < 1 || stage1_steps > t_stop) fail("cascade.stage1_steps", "must lie in [1, t_stop]");
            if (stage2_steps < 1 || stage2_steps > t_stop) fail("cascade.stage2_steps", "must lie in [1, t_stop]");
            if (!(detail_variance > 0.0)) fail("cascade.detail_variance", "must be > 0");
        }
        if (chains < 1) fail("run.chains", "must be >= 1");
        if (out.empty()) fail("run.out", "must not be empty");
    }
};

inline std::string_view toy_name(ToyKind k) { return k == ToyKind::faces ? "faces" : "two_mode"; }

inline std::string_view step_mode_name(StepSizeMode m)
{
    return m == StepSizeMode::constant ? "constant" : "residual_normalized";
}

inline std::string_view gradient_mode_name(GradientMode m)
{
    switch (m) {
    case GradientMode::automatic: return "automatic";
    case GradientMode::exact_vjp: return "exact_vjp";
    case GradientMode::finite_difference: return "finite_difference";
    }
    return "?";
}

namespace detail {

class SectionReader {
public:
    SectionReader(const IniDocument& doc, const std::string& name) : name_(name)
    {
        if (auto it = doc.sections.find(name); it != doc.sections.end()) entries_ = &it->second;
    }

    template <class F>
    void read(const std::string& key, F&& assign)
    {
        seen_.push_back(key);
        if (entries_ == nullptr) return;
        auto it = entries_->find(key);
        if (it == entries_->end()) return;
        try {
            assign(it->second.value);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(name_ + "." + key + ": " + e.what(), it->second.line);
        }
    }

    void reject_unknown() const
    {
        if (entries_ == nullptr) return;
        for (const auto& [key, entry] : *entries_)
            if (std::find(seen_.begin(), seen_.end(), key) == seen_.end())
                throw ConfigError("unknown key '" + name_ + "." + key + "'", entry.line);
    }

private:
    std::string name_;
    const std::map<std::string, IniDocument::Entry>* entries_ = nullptr;
    std::vector<std::string> seen_;
};

template <class T>
T parse_number(const std::string& s)
{
    T v{};
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end) throw std::invalid_argument("'" + s + "' is not a valid number");
    return v;
}

inline double parse_real(const std::string& s)
{
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("'" + s + "' is not a valid number");
    return v;
}

inline bool parse_bool(const std::string& s)
{
    if (s == "true" || s == "yes" || s == "1") return true;
    if (s == "false" || s == "no" || s == "0") return false;
    throw std::invalid_argument("'" + s + "' is not a boolean");
}

template <class T, class F>
std::vector<T> parse_list(const std::string& s, F&& one)
{
    std::vector<T> out;
    for (const auto& item : split_list(s)) out.push_back(one(item));
    if (out.empty()) throw std::invalid_argument("list is empty");
    return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F&& fmt)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) out += ", ";
        out += fmt(v[i]);
    }
    return out;
}

} // namespace detail

inline Method parse_method_or_throw(const std::string& s)
{
    if (auto m = parse_method(s)) return *m;
    throw std::invalid_argument("unknown method '" + s + "'");
}

inline ExperimentConfig config_from_ini(const IniDocument& doc)
{
    using namespace detail;
    for (const auto& [name, entries] : doc.sections)
        if (name != "problem" && name != "sampler" && name != "cascade" && name != "run") {
            const std::size_t line = entries.empty() ? 0 : entries.begin()->second.line;
            throw ConfigError("unknown section [" + name + "]", line);
        }
    ExperimentConfig c;
    auto size = [](const std::string& s) { return parse_number<std::size_t>(s); };
    auto u64 = [](const std::string& s) { return parse_number<std::uint64_t>(s); };
    auto integer = [](const std::string& s) { return parse_number<int>(s); };

    SectionReader p(doc, "problem");
    p.read("toy", [&](const std::string& v) {
        if (v == "faces")
            c.toy = ToyKind::faces;
        else if (v == "two_mode")
            c.toy = ToyKind::two_mode;
        else
            throw std::invalid_argument("unknown toy '" + v + "'");
    });
    p.read("prior_file", [&](const std::string& v) { c.prior_file = v; });
    p.read("height", [&](const std::string& v) { c.height = size(v); });
    p.read("width", [&](const std::string& v) { c.width = size(v); });
    p.read("factor", [&](const std::string& v) { c.factor = size(v); });
    p.read("embedding_dim", [&](const std::string& v) { c.embedding_dim = size(v); });
    p.read("sigma_y", [&](const std::string& v) { c.sigma_y = parse_real(v); });
    p.read("seed", [&](const std::string& v) { c.problem_seed = u64(v); });
    p.read("temperature", [&](const std::string& v) { c.temperature = parse_real(v); });
    p.read("prompt", [&](const std::string& v) { c.prompt = parse_bool(v); });
    p.reject_unknown();

    SectionReader s(doc, "sampler");
    s.read("methods", [&](const std::string& v) { c.methods = parse_list<Method>(v, parse_method_or_throw); });
    s.read("steps", [&](const std::string& v) { c.steps = parse_list<int>(v, integer); });
    s.read("cfg_scale", [&](const std::string& v) { c.cfg_scales = parse_list<double>(v, parse_real); });
    s.read("rho", [&](const std::string& v) { c.rhos = parse_list<double>(v, parse_real); });
    s.read("step_mode", [&](const std::string& v) {
        if (v == "auto")
            c.step_mode.reset();
        else if (v == "constant")
            c.step_mode = StepSizeMode::constant;
        else if (v == "residual_normalized")
            c.step_mode = StepSizeMode::residual_normalized;
        else
            throw std::invalid_argument("unknown step mode '" + v + "'");
    });
    s.read("t_stop", [&](const std::string& v) { c.t_stop = integer(v); });
    s.read("pinv_init", [&](const std::string& v) { c.pinv_init = parse_bool(v); });
    s.read("gradient", [&](const std::string& v) {
        if (v == "automatic")
            c.gradient = GradientMode::automatic;
        else if (v == "exact_vjp")
            c.gradient = GradientMode::exact_vjp;
        else if (v == "finite_difference")
            c.gradient = GradientMode::finite_difference;
        else
            throw std::invalid_argument("unknown gradient mode '" + v + "'");
    });
    s.reject_unknown();

    SectionReader k(doc, "cascade");
    k.read("enabled", [&](const std::string& v) { c.cascade = parse_bool(v); });
    k.read("stage_factor", [&](const std::string& v) { c.stage_factor = size(v); });
    k.read("stage1_steps", [&](const std::string& v) { c.stage1_steps = integer(v); });
    k.read("stage2_steps", [&](const std::string& v) { c.stage2_steps = integer(v); });
    k.read("detail_variance", [&](const std::string& v) { c.detail_variance = parse_real(v); });
    k.read("lambda_avg", [&](const std::string& v) { c.lambdas = parse_list<double>(v, parse_real); });
    k.reject_unknown();

    SectionReader r(doc, "run");
    r.read("chains", [&](const std::string& v) { c.chains = size(v); });
    r.read("seed", [&](const std::string& v) { c.seed = u64(v); });
    r.read("threads", [&](const std::string& v) { c.threads = size(v); });
    r.read("out", [&](const std::string& v) { c.out = v; });
    r.read("save_samples", [&](const std::string& v) { c.save_samples = parse_bool(v); });
    r.reject_unknown();

    c.validate();
    return c;
}

inline ExperimentConfig parse_config(std::istream& in) { return config_from_ini(parse_ini(in)); }

inline ExperimentConfig parse_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    return parse_config(in);
}

/// Serializer whose output parses back to an equal config.
inline void write_config(std::ostream& out, const ExperimentConfig& c)
{
    using detail::join;
    auto real = [](double v) { return format_double(v); };
    auto num = [](auto v) { return std::to_string(v); };
    out << "[problem]\n"
        << "toy = " << toy_name(c.toy) << '\n';
    if (!c.prior_file.empty()) out << "prior_file = " << c.prior_file << '\n';
    out << "height = " << c.height << '\n'
        << "width = " << c.width << '\n'
        << "factor = " << c.factor << '\n'
        << "embedding_dim = " << c.embedding_dim << '\n'
        << "sigma_y = " << real(c.sigma_y) << '\n'
        << "seed = " << c.problem_seed << '\n';
    if (c.temperature) out << "temperature = " << real(*c.temperature) << '\n';
    out << "prompt = " << (c.prompt ? "true" : "false") << '\n';
    out << "\n[sampler]\n"
        << "methods = " << join(c.methods, [](Method m) { return std::string(method_name(m)); }) << '\n'
        << "steps = " << join(c.steps, num) << '\n'
        << "cfg_scale = " << join(c.cfg_scales, real) << '\n'
        << "rho = " << join(c.rhos, real) << '\n'
        << "step_mode = " << (c.step_mode ? std::string(step_mode_name(*c.step_mode)) : "auto") << '\n'
        << "t_stop = " << c.t_stop << '\n'
        << "pinv_init = " << (c.pinv_init ? "true" : "false") << '\n'
        << "gradient = " << gradient_mode_name(c.gradient) << '\n'
        << "\n[cascade]\n"
        << "enabled = " << (c.cascade ? "true" : "false") << '\n'
        << "stage_factor = " << c.stage_factor << '\n'
        << "stage1_steps = " << c.stage1_steps << '\n'
        << "stage2_steps = " << c.stage2_steps << '\n'
        << "detail_variance = " << real(c.detail_variance) << '\n'
        << "lambda_avg = " << join(c.lambdas, real) << '\n'
        << "\n[run]\n"
        << "chains = " << c.chains << '\n'
        << "seed = " << c.seed << '\n'
        << "threads = " << c.threads << '\n'
        << "out = " << c.out << '\n'
        << "save_samples = " << (c.save_samples ? "true" : "false") << '\n';
}

/// Built-in presets reproducing the method comparison, the CFG/step trade-off, the noisy case,
/// a cascade demonstration and the embeddings-averaging sweep at toy scale.
inline std::vector<std::string> preset_names()
{
    return {"tab1-toy", "tab2-tradeoff", "noisy-ddnmplus", "cascade-demo", "embed-avg-sweep"};
}

inline std::optional<ExperimentConfig> preset(const std::string& name)
{
    ExperimentConfig c;
    c.out = "results/" + name;
    if (name == "tab1-toy") {
        c.methods = {Method::unguided, Method::dps, Method::pigdm, Method::ddnm};
        c.steps = {100};
        c.rhos = {0.6};
        c.chains = 16;
    } else if (name == "tab2-tradeoff") {
        c.toy = ToyKind::two_mode;
        c.height = c.width = 8;
        c.cascade = true;
        c.methods = {Method::pigdm};
        c.cfg_scales = {0.0, 1.0, 4.0, 7.0};
        c.rhos = {0.5};
        c.stage1_steps = 100;
        c.stage2_steps = 100;
        c.chains = 16;
    } else if (name == "noisy-ddnmplus") {
        c.sigma_y = 0.05;
        c.prompt = false;
        c.methods = {Method::unguided, Method::ddnm, Method::ddnm_plus};
        c.chains = 16;
    } else if (name == "cascade-demo") {
        c.toy = ToyKind::two_mode;
        c.height = c.width = 8;
        c.cascade = true;
        c.methods = {Method::ddnm, Method::dps, Method::pigdm};
        c.rhos = {0.5};
        c.chains = 8;
    } else if (name == "embed-avg-sweep") {
        c.toy = ToyKind::two_mode;
        c.height = c.width = 8;
        c.cascade = true;
        c.methods = {Method::ddnm};
        c.lambdas = {0.0, 0.2, 0.4, 0.6, 0.8};
        c.stage1_steps = 100;
        c.stage2_steps = 100;
        c.chains = 16;
    } else {
        return std::nullopt;
    }
    c.validate();
    return c;
}

/// A preset name or a path to a config file.
inline ExperimentConfig load_config(const std::string& name_or_path)
{
    if (auto p = preset(name_or_path)) return *p;
    if (!std::filesystem::exists(name_or_path))
        throw ConfigError("'" + name_or_path + "' is neither a preset nor a readable file");
    return parse_config(std::filesystem::path(name_or_path));
}

} // namespace gdsr
