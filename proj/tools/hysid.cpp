// Command-line entry point: generate, train, eval, gradcheck, report.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hysid/experiment.hpp"
#include "hysid/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hysid;
using namespace hysid::experiment;

namespace {

constexpr int kUsageExit = 2;

json read_config(const std::string &path) {
    if (path.empty())
        return json::object();
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception &e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    if (!j.is_object())
        throw ConfigError("config file must hold a JSON object");
    static const std::vector<std::string> known{"profile", "profile_overrides", "seed",   "restarts",  "iterations",
                                                "jobs",    "model",             "eps",    "coords",    "fixed_step"};
    for (const auto &[key, value] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown config key '" + key + "'");
    return j;
}

/// flag > config file > fallback.
template <class T> T resolve(const std::optional<T> &flag, const json &cfg, const char *key, T fallback) {
    if (flag)
        return *flag;
    if (cfg.contains(key))
        return cfg.at(key).get<T>();
    return fallback;
}

void write_json(const fs::path &path, const json &j) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

struct Common {
    std::string config;
    std::optional<std::size_t> jobs;
};

void add_common(CLI::App *sub, Common &c) {
    sub->add_option("--config", c.config, "JSON configuration file (flags take precedence)");
    sub->add_option("--jobs", c.jobs, "concurrent trajectory simulations")->check(CLI::PositiveNumber);
}

// ------------------------------------------------------------------ generate

struct GenerateArgs {
    Common common;
    std::optional<std::string> profile;
    std::optional<std::uint64_t> seed;
    std::string out;
};

int run_generate(const GenerateArgs &a) {
    const json cfg = read_config(a.common.config);
    const std::string name = resolve<std::string>(a.profile, cfg, "profile", "desk");
    Profile profile = profile_by_name(name);
    if (cfg.contains("profile_overrides"))
        profile = profile_from_json(cfg.at("profile_overrides"), profile);
    const std::uint64_t seed = resolve<std::uint64_t>(a.seed, cfg, "seed", 1);
    const Dataset d = generate_dataset(profile, seed);
    save_dataset(d, a.out);
    write_json(fs::path(a.out) / "config.json",
               {{"command", "generate"}, {"profile", profile_to_json(profile)}, {"seed", seed}, {"out", a.out}});
    for (const auto &line : d.log)
        std::cout << "resampled: " << line << '\n';
    std::cout << "wrote " << d.train.size() << " training and " << d.test.size() << " test trajectories ("
              << d.samples() << " samples each) to " << a.out << '\n';
    return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    Common common;
    std::optional<int> model;
    std::string data;
    std::optional<std::size_t> restarts;
    std::optional<std::size_t> iterations;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool quiet = false;
};

int run_train(const TrainArgs &a) {
    const json cfg = read_config(a.common.config);
    const Dataset d = load_dataset(a.data);
    const int model = resolve<int>(a.model, cfg, "model", 0);
    if (model == 0)
        throw ConfigError("train needs --model 1|2|3");
    TrainConfig tc;
    tc.kind = quad::model_from_int(model);
    tc.restarts = resolve<std::size_t>(a.restarts, cfg, "restarts", d.profile.restarts);
    tc.iterations = resolve<std::size_t>(a.iterations, cfg, "iterations",
                                         d.profile.iterations[static_cast<std::size_t>(model - 1)]);
    tc.seed = resolve<std::uint64_t>(a.seed, cfg, "seed", 1);
    tc.jobs = resolve<std::size_t>(a.common.jobs, cfg, "jobs", default_jobs());
    tc.checkpoint_dir = a.out;
    const bool quiet = a.quiet;
    const std::size_t total = tc.iterations;
    tc.progress = [quiet, total](std::size_t r, std::size_t it, double l) {
        if (!quiet && (it % 50 == 0 || it == total))
            std::cout << "restart " << r << " iteration " << it << " loss " << l << " rmse " << rmse_from_loss(l)
                      << std::endl;
    };
    const json resolved{{"command", "train"},          {"model", model},     {"data", fs::absolute(a.data).string()},
                        {"restarts", tc.restarts},     {"iterations", tc.iterations},
                        {"seed", tc.seed},             {"jobs", tc.jobs},    {"out", a.out}};
    write_json(fs::path(a.out) / "config.json", resolved);
    const RunResult run = train(d, tc);
    json j = run_to_json(run);
    j["data"] = resolved["data"];
    write_json(fs::path(a.out) / "run.json", j);
    int failed = 0;
    for (const auto &r : run.restarts) {
        if (r.failed) {
            ++failed;
            std::cout << "restart " << r.index << " FAILED: " << r.failure << '\n';
        } else {
            std::cout << "restart " << r.index << " best loss " << r.best_loss << " at iteration " << r.best_iteration
                      << " test rmse " << r.metrics->rmse_test << '\n';
        }
    }
    return failed == static_cast<int>(run.restarts.size()) ? 1 : 0;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
    Common common;
    std::string checkpoint;
    std::string data;
};

int run_eval(const EvalArgs &a) {
    const json cfg = read_config(a.common.config);
    const std::size_t jobs = resolve<std::size_t>(a.common.jobs, cfg, "jobs", default_jobs());
    const Checkpoint c = load_checkpoint(a.checkpoint);
    const Dataset d = load_dataset(a.data);
    if (!c.meta.contains("model"))
        throw ConfigError("checkpoint has no model entry");
    const Parameterization model(quad::model_from_int(c.meta.at("model").get<int>()));
    if (!(c.theta.layout == model.layout()))
        throw ConfigError("checkpoint layout does not match its uncertainty model");
    const Metrics m = evaluate(model, c.theta.values, d, jobs);
    json out = metrics_to_json(m);
    if (c.meta.contains("best_loss") && c.meta.at("best_loss").is_number()) {
        const double stored = c.meta.at("best_loss").get<double>();
        out["checkpoint_loss"] = stored;
        out["loss_rel_deviation"] = std::abs(m.loss_noisy_train - stored) / std::abs(stored);
    }
    std::cout << out.dump(2) << '\n';
    return 0;
}

// ------------------------------------------------------------------ gradcheck

struct GradcheckArgs {
    Common common;
    std::optional<int> model;
    std::string data;
    std::optional<double> eps;
    std::optional<std::size_t> coords;
    std::optional<std::uint64_t> seed;
    std::optional<double> fixed_step;
};

int run_gradcheck(const GradcheckArgs &a) {
    const json cfg = read_config(a.common.config);
    Dataset d = load_dataset(a.data);
    const int k = resolve<int>(a.model, cfg, "model", 0);
    if (k == 0)
        throw ConfigError("gradcheck needs --model 1|2|3");
    // Adaptive step control makes the loss only piecewise smooth in θ, so by
    // default both sides are compared on a θ-independent step grid.
    d.profile.fixed_step = resolve<double>(a.fixed_step, cfg, "fixed_step", d.profile.period / 4.0);
    const Parameterization model(quad::model_from_int(k));
    const double eps = resolve<double>(a.eps, cfg, "eps", 1e-5);
    const std::uint64_t seed = resolve<std::uint64_t>(a.seed, cfg, "seed", 1);
    const std::size_t jobs = resolve<std::size_t>(a.common.jobs, cfg, "jobs", default_jobs());
    const std::size_t count = resolve<std::size_t>(a.coords, cfg, "coords", 32);
    const auto theta = model.initial_guess(seed);
    std::vector<std::size_t> coords;
    if (count >= theta.size()) {
        for (std::size_t i = 0; i < theta.size(); ++i)
            coords.push_back(i);
    } else {
        // Every non-network entry plus a seeded sample of the network weights.
        CounterRng rng = CounterRng::keyed({seed, 0x67726164ULL});
        std::vector<std::size_t> pool;
        for (const auto &s : model.layout().segments())
            for (std::size_t i = s.offset; i < s.offset + s.size; ++i)
                (s.name.rfind("nn", 0) == 0 ? pool : coords).push_back(i);
        for (std::size_t i = 0; i + 1 < pool.size(); ++i)
            std::swap(pool[i], pool[i + rng.next_u64() % (pool.size() - i)]);
        const std::size_t extra = count > coords.size() ? count - coords.size() : 0;
        coords.insert(coords.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(std::min(extra, pool.size())));
        std::sort(coords.begin(), coords.end());
    }
    const GradientCheck g = gradient_check(model, theta, d, eps, coords, jobs);
    for (std::size_t j = 0; j < g.coords.size(); ++j)
        std::printf("theta[%zu] adjoint % .10e fd % .10e eps %g%s\n", g.coords[j], g.adjoint[j], g.fd[j], g.eps_used[j],
                    g.smooth[j] ? "" : " (non-smooth, excluded)");
    std::printf("max relative deviation %.3e (%zu coordinates, %zu non-smooth, eps %g, %s)\n", g.max_rel,
                g.coords.size(), g.non_smooth, eps,
                d.profile.fixed_step > 0.0 ? ("fixed step " + std::to_string(d.profile.fixed_step)).c_str()
                                           : "adaptive steps");
    const bool ok = g.max_rel <= 1e-4 && g.non_smooth < g.coords.size();
    std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED (threshold 1e-4)");
    return ok ? 0 : 1;
}

// ------------------------------------------------------------------ report

struct ReportArgs {
    Common common;
    std::vector<std::string> runs;
    std::string data;
    std::string out;
};

int run_report(const ReportArgs &a) {
    std::vector<RunResult> runs;
    std::string data_dir = a.data;
    for (const auto &dir : a.runs) {
        std::ifstream in(fs::path(dir) / "run.json");
        if (!in)
            throw DataError("no run.json in " + dir);
        const json j = json::parse(in);
        runs.push_back(run_from_json(j));
        if (data_dir.empty() && j.contains("data"))
            data_dir = j.at("data").get<std::string>();
    }
    if (data_dir.empty())
        throw ConfigError("report needs --data when run.json does not name its dataset");
    const Dataset d = load_dataset(data_dir);
    write_report(runs, d, a.out);
    write_json(fs::path(a.out) / "config.json", {{"command", "report"}, {"runs", a.runs}, {"data", data_dir}, {"out", a.out}});
    json summary = json::array();
    for (const auto &r : runs)
        summary.push_back(run_to_json(r));
    write_json(fs::path(a.out) / "run.json", {{"runs", summary}, {"data", data_dir}});
    const Table t = summarize(runs);
    std::printf("%-18s", "metric");
    for (const auto &c : t.columns)
        std::printf(" %32s", c.c_str());
    std::printf("\n");
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        std::printf("%-18s", t.rows[i].c_str());
        for (const auto &c : t.columns) {
            const Triple &tr = t.values.at(c)[i];
            std::printf("  (%.3e, %.3e, %.3e)", tr.min, tr.mean, tr.max);
        }
        std::printf("\n");
    }
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Hybrid-system simulation and closed-loop quad-rotor identification"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto *g = app.add_subcommand("generate", "simulate a training/test dataset");
    add_common(g, gen.common);
    g->add_option("--profile", gen.profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    g->add_option("--seed", gen.seed, "dataset seed");
    g->add_option("--out", gen.out, "output directory")->required();

    TrainArgs tr;
    auto *t = app.add_subcommand("train", "identify one uncertainty model");
    add_common(t, tr.common);
    t->add_option("--model", tr.model, "uncertainty model 1, 2 or 3")->check(CLI::Range(1, 3));
    t->add_option("--data", tr.data, "dataset directory")->required();
    t->add_option("--restarts", tr.restarts, "number of restarts");
    t->add_option("--iters", tr.iterations, "ADAM iterations per restart");
    t->add_option("--seed", tr.seed, "restart seed base");
    t->add_option("--out", tr.out, "output directory")->required();
    t->add_flag("--quiet", tr.quiet, "no per-iteration progress");

    EvalArgs ev;
    auto *e = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(e, ev.common);
    e->add_option("--checkpoint", ev.checkpoint, "checkpoint JSON")->required();
    e->add_option("--data", ev.data, "dataset directory")->required();

    GradcheckArgs gc;
    auto *c = app.add_subcommand("gradcheck", "compare adjoint gradients with finite differences");
    add_common(c, gc.common);
    c->add_option("--model", gc.model, "uncertainty model 1, 2 or 3")->check(CLI::Range(1, 3));
    c->add_option("--data", gc.data, "dataset directory")->required();
    c->add_option("--eps", gc.eps, "finite-difference step (default 1e-5)");
    c->add_option("--coords", gc.coords, "number of coordinates checked (default 32)");
    c->add_option("--seed", gc.seed, "seed of the checked θ and coordinate sample");
    c->add_option("--fixed-step", gc.fixed_step, "step grid for both gradients (default period/4; 0 = adaptive)")
        ->check(CLI::NonNegativeNumber);

    ReportArgs rp;
    auto *r = app.add_subcommand("report", "tabulate runs and emit plot data");
    add_common(r, rp.common);
    r->add_option("--runs", rp.runs, "training output directories")->required()->expected(1, -1);
    r->add_option("--data", rp.data, "dataset directory (default: the one named in run.json)");
    r->add_option("--out", rp.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError &err) {
        std::cerr << "error: " << err.what() << "\n\n" << app.help();
        return kUsageExit;
    }

    try {
        if (*g)
            return run_generate(gen);
        if (*t)
            return run_train(tr);
        if (*e)
            return run_eval(ev);
        if (*c)
            return run_gradcheck(gc);
        if (*r)
            return run_report(rp);
    } catch (const std::exception &ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return kUsageExit;
}
