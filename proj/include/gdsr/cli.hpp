#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gdsr/config.hpp"
#include "gdsr/experiment.hpp"
#include "gdsr/io.hpp"

namespace gdsr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Flags shared by `sample` and `sweep` that replace one axis of the configured grid.
struct Overrides {
    std::string config = "tab1-toy";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> method;
    std::optional<int> steps;
    std::optional<double> cfg_scale;
    std::optional<double> rho;
    std::optional<double> sigma_y;
    std::optional<double> lambda_avg;

    void attach(CLI::App* app)
    {
        app->add_option("--config", config, "preset name or config file")->capture_default_str();
        app->add_option("--seed", seed, "base seed");
        app->add_option("--out", out, "output directory");
        app->add_option("--method", method, "unguided|dps|pigdm|ddnm|ddnm_plus|energy|energy_ddnm");
        app->add_option("--steps", steps, "sampling steps")->check(CLI::PositiveNumber);
        app->add_option("--cfg-scale", cfg_scale, "classifier-free guidance scale");
        app->add_option("--rho", rho, "guidance step size")->check(CLI::NonNegativeNumber);
        app->add_option("--sigma-y", sigma_y, "measurement noise level")->check(CLI::NonNegativeNumber);
        app->add_option("--lambda-avg", lambda_avg, "embeddings averaging weight")->check(CLI::Range(0.0, 1.0));
    }

    [[nodiscard]] ExperimentConfig resolve() const
    {
        ExperimentConfig c = load_config(config);
        if (seed) c.seed = *seed;
        if (out) c.out = *out;
        if (method) c.methods = {parse_method_or_throw(*method)};
        if (steps) {
            c.steps = {*steps};
            if (c.cascade) c.stage1_steps = c.stage2_steps = *steps;
        }
        if (cfg_scale) c.cfg_scales = {*cfg_scale};
        if (rho) c.rhos = {*rho};
        if (sigma_y) c.sigma_y = *sigma_y;
        if (lambda_avg) c.lambdas = {*lambda_avg};
        c.validate();
        return c;
    }
};

namespace detail {

inline int cmd_build_op(std::size_t h, std::size_t w, std::size_t factor, std::size_t channels,
                        const std::string& out_path, std::ostream& out)
{
    const DegradationOperator a = build_bicubic_downsampler(h, w, factor, channels);
    write_operator(out_path, a);
    const SvdFactors f = factorize(a);
    out << "operator " << to_string(a.input_shape()) << " -> " << to_string(a.output_shape()) << " rank " << f.rank()
        << " written to " << out_path << '\n';
    return kExitOk;
}

inline int cmd_sample(const Overrides& o, std::ostream& out)
{
    ExperimentConfig c = o.resolve();
    if (!o.out) c.out = "sample";
    const ExperimentContext ctx(c);
    const GridPoint g = expand_grid(c).front();
    const ChainOutput r = ctx.run_chain(g, c.seed);
    namespace fs = std::filesystem;
    const fs::path dir = c.out;
    fs::create_directories(dir);
    write_tensor(dir / "sample.ztsr", r.x);
    if (r.x.channels() == 1 || r.x.channels() == 3)
        write_netpbm(dir / (r.x.channels() == 1 ? "sample.pgm" : "sample.ppm"), r.x);
    if (c.cascade) {
        write_tensor(dir / "stage1.ztsr", r.x_lr);
        write_trace_csv(dir / "trace_stage1.csv", r.stage1);
        write_trace_csv(dir / "trace_stage2.csv", r.stage2);
    } else {
        write_trace_csv(dir / "trace.csv", r.stage1);
    }
    write_operator(dir / "operator.ztsr", ctx.measurement().op());
    write_tensor(dir / "measurement.ztsr", ctx.problem().y);
    out << "method=" << method_name(g.method) << " seed=" << c.seed
        << " lr_psnr_db=" << format_double(lr_psnr(ctx.measurement().f(), ctx.problem().y, r.x))
        << " semantic=" << format_double(semantic_score(*ctx.problem().embedder, ctx.problem().condition, r.x).value)
        << '\n';
    return kExitOk;
}

inline int cmd_sweep(const Overrides& o, std::ostream& out)
{
    const ExperimentConfig c = o.resolve();
    const ExperimentResult r = run_experiment(c);
    out << r.rows.size() << " rows written to " << (std::filesystem::path(c.out) / "results.csv").string() << '\n';
    return kExitOk;
}

/// Recompute every row's LR PSNR from the stored samples, operator and measurement.
inline int cmd_eval(const std::string& dir_name, double tolerance, std::ostream& out, std::ostream& err)
{
    namespace fs = std::filesystem;
    const fs::path dir = dir_name;
    std::ifstream in(dir / "results.csv");
    if (!in) throw std::runtime_error("no results.csv in " + dir.string());
    const CsvTable csv = read_csv(in);
    const auto f = factorize(read_operator(dir / "operator.ztsr"));
    const ImageTensor y = read_image_tensor(dir / "measurement.ztsr");
    const auto c_id = csv.column("run_id");
    const auto c_lr = csv.column("lr_psnr_db");
    double worst = 0.0;
    std::size_t checked = 0;
    for (const auto& row : csv.rows) {
        const fs::path sample = dir / "samples" / (row[c_id] + ".ztsr");
        if (!fs::exists(sample)) continue;
        const double recomputed = lr_psnr(f, y, read_image_tensor(sample));
        worst = std::max(worst, std::abs(recomputed - parse_cell(row[c_lr])));
        ++checked;
    }
    out << "rows=" << csv.rows.size() << " checked=" << checked << " max_lr_psnr_diff_db=" << format_double(worst)
        << '\n';
    if (checked == 0) {
        err << "no stored samples to check\n";
        return kExitRuntime;
    }
    if (worst > tolerance) {
        err << "stored lr_psnr differs from recomputation by " << worst << " dB\n";
        return kExitRuntime;
    }
    return kExitOk;
}

inline int cmd_plotdata(const std::string& csv_path, const std::string& out_dir, std::ostream& out)
{
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open " + csv_path);
    const auto tables = emit_plotdata(read_csv(in));
    if (out_dir.empty()) {
        for (std::size_t i = 0; i < tables.size(); ++i) out << (i ? "\n\n" : "") << render(tables[i]);
        return kExitOk;
    }
    std::filesystem::create_directories(out_dir);
    for (const auto& t : tables) {
        std::ofstream f(std::filesystem::path(out_dir) / (t.name + ".dat"));
        f << render(t);
    }
    out << tables.size() << " tables written to " << out_dir << '\n';
    return kExitOk;
}

} // namespace detail

/// Entry point of the command-line tool.  Returns 0 on success, 1 on usage errors and 2 on
/// runtime failures.  Diagnostics go to `err`; summaries to `out`.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr)
{
    CLI::App app{"Measurement-guided diffusion samplers for super-resolution on synthetic priors", "gdsr"};
    app.require_subcommand(1);

    std::size_t h = 16, w = 16, factor = 4, channels = 1;
    std::string op_out = "operator.ztsr";
    auto* build = app.add_subcommand("build-op", "write a bicubic downsampling operator file");
    build->add_option("--height", h)->check(CLI::PositiveNumber)->capture_default_str();
    build->add_option("--width", w)->check(CLI::PositiveNumber)->capture_default_str();
    build->add_option("--factor", factor)->check(CLI::PositiveNumber)->capture_default_str();
    build->add_option("--channels", channels)->check(CLI::PositiveNumber)->capture_default_str();
    build->add_option("--out", op_out, "operator file")->capture_default_str();

    Overrides sample_o;
    auto* sample = app.add_subcommand("sample", "run one chain and write its sample and trace");
    sample_o.attach(sample);

    Overrides sweep_o;
    auto* sweep = app.add_subcommand("sweep", "run the configured grid and write results.csv");
    sweep_o.attach(sweep);

    std::string eval_dir = "results";
    double eval_tol = 1e-9;
    auto* eval = app.add_subcommand("eval", "recompute LR PSNR of a finished sweep from its files");
    eval->add_option("--out", eval_dir, "sweep output directory")->capture_default_str();
    eval->add_option("--tolerance", eval_tol, "allowed difference in dB")->capture_default_str();

    std::string csv_path;
    std::string plot_out;
    auto* plot = app.add_subcommand("plotdata", "aggregate a results CSV into plot tables");
    plot->add_option("csv", csv_path, "results.csv")->required();
    plot->add_option("--out", plot_out, "directory for .dat tables (default: standard output)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForVersion& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, err, err);
        err << app.help();
        return kExitUsage;
    }

    try {
        if (*build) return detail::cmd_build_op(h, w, factor, channels, op_out, out);
        if (*sample) return detail::cmd_sample(sample_o, out);
        if (*sweep) return detail::cmd_sweep(sweep_o, out);
        if (*eval) return detail::cmd_eval(eval_dir, eval_tol, out, err);
        if (*plot) return detail::cmd_plotdata(csv_path, plot_out, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

} // namespace gdsr
