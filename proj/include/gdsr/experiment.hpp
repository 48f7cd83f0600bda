#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "gdsr/cascade.hpp"
#include "gdsr/config.hpp"
#include "gdsr/io.hpp"
#include "gdsr/metrics.hpp"
#include "gdsr/problems.hpp"

namespace gdsr {

inline constexpr const char* kResultsHeader =
    "run_id,method,steps,cfg_scale,rho,sigma_y,lambda_avg,seed,lr_psnr_db,semantic,diversity,wall_ms";

struct GridPoint {
    Method method = Method::ddnm;
    int steps = 100;
    double cfg_scale = 1.0;
    double rho = 1.0;
    double lambda = 0.0;
};

/// Cartesian product in the order methods, steps, cfg scales, rhos, lambdas.
inline std::vector<GridPoint> expand_grid(const ExperimentConfig& c)
{
    std::vector<GridPoint> g;
    for (Method m : c.methods)
        for (int s : c.steps)
            for (double cfg : c.cfg_scales)
                for (double r : c.rhos)
                    for (double l : c.lambdas) g.push_back({m, s, cfg, r, l});
    return g;
}

inline ToyProblem build_problem(const ExperimentConfig& c)
{
    const ToyOptions o{c.height, c.width, c.factor, c.embedding_dim, c.sigma_y, c.problem_seed};
    if (!c.prior_file.empty()) {
        GaussianMixturePrior prior = read_prior(c.prior_file);
        const std::size_t truth = prior.components() > 1 ? 1 : 0;
        return problem_from_prior(std::move(prior), o, truth, c.temperature.value_or(1.0));
    }
    if (c.toy == ToyKind::two_mode) {
        TwoModeOptions t;
        if (c.temperature) t.temperature = *c.temperature;
        return two_mode_toy(o, t);
    }
    ToyProblem p = faces_toy(o);
    if (c.temperature) p.temperature = *c.temperature;
    return p;
}

inline SamplerConfig sampler_for(const ExperimentConfig& c, const GridPoint& g, std::uint64_t seed)
{
    SamplerConfig s = SamplerConfig::for_method(g.method);
    if (c.step_mode) s.step_mode = *c.step_mode;
    s.steps = g.steps;
    s.t_stop = c.t_stop;
    s.pinv_init = c.pinv_init;
    s.rho = g.rho;
    s.cfg_scale = g.cfg_scale;
    s.seed = seed;
    s.gradient = c.gradient;
    return s;
}

/// Seed of the stage-2 chain; stage 1 uses the chain seed itself.
inline std::uint64_t stage2_seed(std::uint64_t seed) { return seed + (std::uint64_t{1} << 32); }

struct ChainOutput {
    ImageTensor x;
    ImageTensor x_lr;  // empty unless cascaded
    SampleTrace stage1;
    SampleTrace stage2;
    double wall_ms = 0.0;
};

/// Shared read-only state for all chains of one experiment.
class ExperimentContext {
public:
    explicit ExperimentContext(ExperimentConfig config)
        : config_(std::move(config)), problem_(build_problem(config_)), schedule_(make_linear_schedule()),
          measurement_(problem_.measurement()),
          denoiser_(std::make_shared<const GmmDenoiser>(problem_.prior, schedule_, problem_.temperature))
    {
        config_.validate();
    }

    [[nodiscard]] const ExperimentConfig& config() const { return config_; }
    [[nodiscard]] const ToyProblem& problem() const { return problem_; }
    [[nodiscard]] const NoiseSchedule& schedule() const { return schedule_; }
    [[nodiscard]] const Measurement& measurement() const { return measurement_; }

    [[nodiscard]] ChainOutput run_chain(const GridPoint& g, std::uint64_t seed) const
    {
        const auto start = std::chrono::steady_clock::now();
        ChainOutput out;
        const SamplerConfig s = sampler_for(config_, g, seed);
        if (config_.cascade) {
            CascadeOptions co;
            co.stage_factor = config_.stage_factor;
            co.stage1_steps = config_.stage1_steps;
            co.stage2_steps = config_.stage2_steps;
            co.detail_variance = config_.detail_variance;
            co.lambda = g.lambda;
            CascadePlan plan = make_cascade_plan(problem_, schedule_, co, s);
            if (!config_.prompt) plan.stage1.condition.reset();
            CascadeResult r =
                run_cascade(plan, schedule_, problem_.y, problem_.sigma_y, g.method, {seed, stage2_seed(seed)});
            out.x = std::move(r.x);
            out.x_lr = std::move(r.x_lr);
            out.stage1 = std::move(r.stage1);
            out.stage2 = std::move(r.stage2);
        } else {
            SamplingProblem p;
            p.denoiser = denoiser_.get();
            p.schedule = &schedule_;
            p.measurement = &measurement_;
            p.condition = config_.prompt ? &problem_.condition : nullptr;
            SampleResult r = run_sampler(s, p, problem_.prior.shape);
            out.x = std::move(r.x0);
            out.stage1 = std::move(r.trace);
        }
        out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return out;
    }

private:
    ExperimentConfig config_;
    ToyProblem problem_;
    NoiseSchedule schedule_;
    Measurement measurement_;
    std::shared_ptr<const GmmDenoiser> denoiser_;
};

struct ResultRow {
    std::string run_id;
    GridPoint point;
    double sigma_y = 0.0;
    std::uint64_t seed = 0;
    double lr_psnr_db = 0.0;
    double semantic = 0.0;
    double diversity = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
};

inline std::string run_id(std::size_t grid_index, std::size_t chain)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "g%03zu_c%04zu", grid_index, chain);
    return buf;
}

inline std::string format_row(const ResultRow& r)
{
    std::ostringstream o;
    o << r.run_id << ',' << method_name(r.point.method) << ',' << r.point.steps << ','
      << format_double(r.point.cfg_scale) << ',' << format_double(r.point.rho) << ',' << format_double(r.sigma_y)
      << ',' << format_double(r.point.lambda) << ',' << r.seed << ',' << format_double(r.lr_psnr_db) << ','
      << format_double(r.semantic) << ',' << format_double(r.diversity) << ',' << format_double(r.wall_ms);
    return o.str();
}

/// Run `count` independent jobs on up to `threads` workers; job i writes only its own slot.
template <class Job>
void parallel_for(std::size_t count, std::size_t threads, Job&& job)
{
    if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next = count;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

struct ExperimentResult {
    std::vector<ResultRow> rows;
    std::vector<ChainOutput> chains;  // same order as rows
};

/// Every (grid point, chain) pair; chain c uses seed base + c.  Results come back in grid-major
/// order independent of scheduling.
inline ExperimentResult run_grid(const ExperimentContext& ctx)
{
    const ExperimentConfig& c = ctx.config();
    const auto grid = expand_grid(c);
    const std::size_t total = grid.size() * c.chains;
    ExperimentResult res;
    res.rows.resize(total);
    res.chains.resize(total);
    parallel_for(total, c.threads, [&](std::size_t i) {
        const std::size_t gi = i / c.chains;
        const std::size_t chain = i % c.chains;
        const std::uint64_t seed = c.seed + chain;
        res.chains[i] = ctx.run_chain(grid[gi], seed);
        ResultRow& r = res.rows[i];
        r.run_id = run_id(gi, chain);
        r.point = grid[gi];
        r.sigma_y = c.sigma_y;
        r.seed = seed;
        r.lr_psnr_db = lr_psnr(ctx.measurement().f(), ctx.problem().y, res.chains[i].x);
        r.semantic = semantic_score(*ctx.problem().embedder, ctx.problem().condition, res.chains[i].x).value;
        r.wall_ms = res.chains[i].wall_ms;
    });
    if (c.chains >= 2)
        for (std::size_t gi = 0; gi < grid.size(); ++gi) {
            std::vector<ImageTensor> xs;
            for (std::size_t k = 0; k < c.chains; ++k) xs.push_back(res.chains[gi * c.chains + k].x);
            const double d = diversity(xs).mean_pixel_std;
            for (std::size_t k = 0; k < c.chains; ++k) res.rows[gi * c.chains + k].diversity = d;
        }
    return res;
}

/// Writes results.csv, config.ini, operator.ztsr, measurement.ztsr, truth.ztsr and, when
/// enabled, per-chain samples (.ztsr and .pgm/.ppm) and traces under samples/ and traces/.
inline ExperimentResult run_experiment(const ExperimentConfig& config)
{
    const ExperimentContext ctx(config);
    ExperimentResult res = run_grid(ctx);
    namespace fs = std::filesystem;
    const fs::path out = config.out;
    fs::create_directories(out);
    {
        std::ofstream f(out / "config.ini");
        write_config(f, config);
    }
    write_operator(out / "operator.ztsr", ctx.measurement().op());
    write_tensor(out / "measurement.ztsr", ctx.problem().y);
    write_tensor(out / "truth.ztsr", ctx.problem().x_true);
    {
        std::ofstream f(out / "results.csv", std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + (out / "results.csv").string());
        f << kResultsHeader << '\n';
        for (const auto& r : res.rows) f << format_row(r) << '\n';
    }
    if (config.save_samples) {
        fs::create_directories(out / "samples");
        fs::create_directories(out / "traces");
        const bool image = ctx.problem().prior.shape.channels == 1 || ctx.problem().prior.shape.channels == 3;
        const char* ext = ctx.problem().prior.shape.channels == 1 ? ".pgm" : ".ppm";
        for (std::size_t i = 0; i < res.rows.size(); ++i) {
            const std::string id = res.rows[i].run_id;
            write_tensor(out / "samples" / (id + ".ztsr"), res.chains[i].x);
            if (image) write_netpbm(out / "samples" / (id + ext), res.chains[i].x);
            if (config.cascade) {
                write_tensor(out / "samples" / (id + "_stage1.ztsr"), res.chains[i].x_lr);
                write_trace_csv(out / "traces" / (id + "_stage1.csv"), res.chains[i].stage1);
                write_trace_csv(out / "traces" / (id + "_stage2.csv"), res.chains[i].stage2);
            } else {
                write_trace_csv(out / "traces" / (id + ".csv"), res.chains[i].stage1);
            }
        }
    }
    return res;
}

/// Parsed results CSV: header names plus string cells.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(const std::string& name) const
    {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw FormatError("results CSV is missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline CsvTable read_csv(std::istream& in)
{
    CsvTable t;
    std::string line;
    auto split = [](const std::string& l) {
        std::vector<std::string> cells;
        std::stringstream ss(l);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
        if (!l.empty() && l.back() == ',') cells.emplace_back();
        return cells;
    };
    if (!std::getline(in, line)) return t;
    t.header = split(line);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto cells = split(line);
        if (cells.size() != t.header.size())
            throw FormatError("CSV line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                              " cells, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline double parse_cell(const std::string& s)
{
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    return std::stod(s);
}

struct Summary {
    std::size_t n = 0;
    double mean = 0.0;
    double se = 0.0;  // sample std / sqrt(n); 0 for n < 2
};

inline Summary summarize(const std::vector<double>& v)
{
    Summary s;
    s.n = v.size();
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(s.n);
    if (s.n >= 2) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.se = std::sqrt(ss / static_cast<double>(s.n - 1)) / std::sqrt(static_cast<double>(s.n));
    }
    return s;
}

struct PlotTable {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

inline std::string render(const PlotTable& t)
{
    std::ostringstream o;
    o << "# " << t.name << '\n' << '#';
    for (const auto& c : t.columns) o << ' ' << c;
    o << '\n';
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) o << (i ? " " : "") << r[i];
        o << '\n';
    }
    return o.str();
}

/// Aggregated tables for the trade-off curve, the consistency bars and diversity against the
/// number of distinct conditions.
inline std::vector<PlotTable> emit_plotdata(const CsvTable& csv)
{
    const auto c_method = csv.column("method");
    const auto c_steps = csv.column("steps");
    const auto c_cfg = csv.column("cfg_scale");
    const auto c_rho = csv.column("rho");
    const auto c_lambda = csv.column("lambda_avg");
    const auto c_lr = csv.column("lr_psnr_db");
    const auto c_sem = csv.column("semantic");
    const auto c_div = csv.column("diversity");

    using Key = std::tuple<std::string, int, double, double, double>;
    std::map<Key, std::pair<std::vector<double>, std::vector<double>>> curve;
    std::map<std::string, std::vector<double>> bars;
    std::map<std::pair<double, double>, std::vector<double>> div;
    for (const auto& r : csv.rows) {
        const Key k{r[c_method], std::stoi(r[c_steps]), parse_cell(r[c_cfg]), parse_cell(r[c_rho]),
                    parse_cell(r[c_lambda])};
        curve[k].first.push_back(parse_cell(r[c_lr]));
        curve[k].second.push_back(parse_cell(r[c_sem]));
        bars[r[c_method]].push_back(parse_cell(r[c_lr]));
        div[{parse_cell(r[c_lambda]), parse_cell(r[c_cfg])}].push_back(parse_cell(r[c_div]));
    }

    PlotTable t1{"tradeoff-curve",
                 {"method", "steps", "cfg_scale", "rho", "lambda_avg", "n", "lr_psnr_mean", "lr_psnr_se",
                  "semantic_mean", "semantic_se"},
                 {}};
    for (const auto& [k, v] : curve) {
        const Summary lr = summarize(v.first);
        const Summary se = summarize(v.second);
        t1.rows.push_back({std::get<0>(k), std::to_string(std::get<1>(k)), format_double(std::get<2>(k)),
                           format_double(std::get<3>(k)), format_double(std::get<4>(k)), std::to_string(lr.n),
                           format_double(lr.mean), format_double(lr.se), format_double(se.mean),
                           format_double(se.se)});
    }
    PlotTable t2{"consistency-bars", {"method", "n", "lr_psnr_mean", "lr_psnr_se"}, {}};
    for (const auto& [m, v] : bars) {
        const Summary s = summarize(v);
        t2.rows.push_back({m, std::to_string(s.n), format_double(s.mean), format_double(s.se)});
    }
    PlotTable t3{"diversity-vs-prompts", {"lambda_avg", "cfg_scale", "n", "diversity_mean"}, {}};
    for (const auto& [k, v] : div) {
        const Summary s = summarize(v);
        t3.rows.push_back({format_double(k.first), format_double(k.second), std::to_string(s.n), format_double(s.mean)});
    }
    return {t1, t2, t3};
}

} // namespace gdsr
