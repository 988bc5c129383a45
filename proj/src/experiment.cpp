#include "hysid/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "hysid/autodiff.hpp"
#include "hysid/random.hpp"

namespace hysid::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- profiles

std::size_t Profile::samples() const {
    if (!(period > 0.0) || !(horizon > 0.0))
        throw ConfigError("profile horizon and period must be positive");
    const double steps = horizon / period;
    const double whole = std::round(steps);
    if (std::abs(steps - whole) > 1e-9 * std::max(1.0, whole))
        throw ConfigError("profile horizon is not a whole number of sample periods");
    return static_cast<std::size_t>(whole) + 1;
}

SampleSchedule Profile::schedule() const { return SampleSchedule(0.0, period, samples()); }

SolverOptions Profile::solver() const {
    SolverOptions o;
    o.tol = {tol_abs, tol_rel};
    o.fixed_step = fixed_step;
    return o;
}

Profile desk_profile() { return Profile{}; }

Profile paper_profile() {
    Profile p;
    p.name = "paper";
    p.train_trajectories = 15;
    p.test_trajectories = 10;
    p.horizon = 10.0;
    p.restarts = 10;
    p.iterations = {1000, 1000, 1000};
    return p;
}

Profile profile_by_name(const std::string &name) {
    if (name == "desk")
        return desk_profile();
    if (name == "paper")
        return paper_profile();
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

json profile_to_json(const Profile &p) {
    return json{{"name", p.name},
                {"train_trajectories", p.train_trajectories},
                {"test_trajectories", p.test_trajectories},
                {"horizon", p.horizon},
                {"period", p.period},
                {"restarts", p.restarts},
                {"iterations", p.iterations},
                {"noise_std", p.noise_std},
                {"reference_step_std", p.reference_step_std},
                {"excitation_std", p.excitation_std},
                {"angle_std", p.angle_std},
                {"state_std", p.state_std},
                {"reference_all_components", p.reference_all_components},
                {"tol_abs", p.tol_abs},
                {"tol_rel", p.tol_rel},
                {"fixed_step", p.fixed_step},
                {"max_attempts", p.max_attempts}};
}

Profile profile_from_json(const json &j, Profile p) {
    if (!j.is_object())
        throw ConfigError("profile configuration must be a JSON object");
    for (const auto &[key, value] : j.items()) {
        try {
            if (key == "name") p.name = value.get<std::string>();
            else if (key == "train_trajectories") p.train_trajectories = value.get<std::size_t>();
            else if (key == "test_trajectories") p.test_trajectories = value.get<std::size_t>();
            else if (key == "horizon") p.horizon = value.get<double>();
            else if (key == "period") p.period = value.get<double>();
            else if (key == "restarts") p.restarts = value.get<std::size_t>();
            else if (key == "iterations") p.iterations = value.get<std::array<std::size_t, 3>>();
            else if (key == "noise_std") p.noise_std = value.get<double>();
            else if (key == "reference_step_std") p.reference_step_std = value.get<double>();
            else if (key == "excitation_std") p.excitation_std = value.get<double>();
            else if (key == "angle_std") p.angle_std = value.get<double>();
            else if (key == "state_std") p.state_std = value.get<double>();
            else if (key == "reference_all_components") p.reference_all_components = value.get<bool>();
            else if (key == "tol_abs") p.tol_abs = value.get<double>();
            else if (key == "tol_rel") p.tol_rel = value.get<double>();
            else if (key == "fixed_step") p.fixed_step = value.get<double>();
            else if (key == "max_attempts") p.max_attempts = value.get<std::size_t>();
            else throw ConfigError("unknown profile key '" + key + "'");
        } catch (const json::exception &e) {
            throw ConfigError("profile key '" + key + "': " + e.what());
        }
    }
    if (p.train_trajectories == 0 || p.test_trajectories == 0)
        throw ConfigError("profile needs at least one training and one test trajectory");
    if (p.max_attempts == 0)
        throw ConfigError("profile max_attempts must be positive");
    p.samples();
    return p;
}

// ---------------------------------------------------------------- helpers

namespace {

/// Runs fn(i) for i < n on up to `jobs` threads and rethrows the failure with
/// the smallest index, so the outcome does not depend on scheduling.
template <class F> void parallel_for(std::size_t n, std::size_t jobs, F &&fn) {
    std::vector<std::exception_ptr> errors(n);
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto &t : pool)
        t.join();
    for (auto &e : errors)
        if (e)
            std::rethrow_exception(e);
}

enum Signal : std::uint64_t { kInitial = 0, kReference = 1, kExcitation = 2, kNoise = 3 };

CounterRng stream(std::uint64_t seed, std::size_t traj, std::uint64_t attempt, Signal s, std::size_t comp) {
    return CounterRng::keyed({seed, traj, attempt, s, comp});
}

/// Draws signals for one trajectory and simulates the true closed loop.
TrajectoryData draw_trajectory(const Dataset &d, std::size_t global_index, std::uint64_t attempt, bool test) {
    const Profile &pr = d.profile;
    const std::size_t n = pr.samples();
    TrajectoryData tr;
    tr.test = test;
    tr.attempt = attempt;
    for (std::size_t i = 0; i < kStateDim; ++i) {
        auto rng = stream(d.seed, global_index, attempt, kInitial, i);
        tr.x0[i] = rng.normal(0.0, i < 3 ? pr.angle_std : pr.state_std);
    }
    auto ex = std::make_shared<Excitation>();
    ex->r.assign(n, {});
    ex->rn.assign(n, {});
    for (std::size_t i = 0; i < kStateDim; ++i) {
        if (!pr.reference_all_components && i < quad::kPos)
            continue;
        auto rng = stream(d.seed, global_index, attempt, kReference, i);
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            acc += rng.normal(0.0, pr.reference_step_std);
            ex->r[k][i] = acc;
        }
    }
    for (std::size_t j = 0; j < kControlDim; ++j) {
        auto rng = stream(d.seed, global_index, attempt, kExcitation, j);
        for (std::size_t k = 0; k < n; ++k)
            ex->rn[k][j] = rng.normal(0.0, pr.excitation_std);
    }
    tr.excitation = ex;

    const SampleSchedule sched = pr.schedule();
    const auto sys = quad::closed_loop<double>(d.params, d.controller, sched, tr.x0, ex);
    const auto times = sched.times();
    const auto traj = adaptive_solve<double>(sys, {}, 0.0, sched.end(), times, pr.solver());
    tr.x_true.resize(n);
    tr.y.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < kStateDim; ++i) {
            tr.x_true[k][i] = traj.states[k][i];
            if (!std::isfinite(tr.x_true[k][i]))
                throw IntegrationError("non-finite state in generated trajectory", times[k], 0.0);
        }
    }
    for (std::size_t c = 0; c < 3; ++c) {
        auto rng = stream(d.seed, global_index, attempt, kNoise, c);
        for (std::size_t k = 0; k < n; ++k)
            tr.y[k][c] = tr.x_true[k][quad::kPos + c] + (test ? 0.0 : rng.normal(0.0, pr.noise_std));
    }
    return tr;
}

std::shared_ptr<const Parameterization> borrow(const Parameterization &m) {
    return std::shared_ptr<const Parameterization>(std::shared_ptr<const void>{}, &m);
}

const std::vector<TrajectoryData> &split_of(const Dataset &d, Split s) {
    return s == Split::Train ? d.train : d.test;
}

template <class S>
HybridSystem<S> model_loop(const Parameterization &model, const Dataset &d, const TrajectoryData &tr) {
    return quad::closed_loop<S>(d.params, d.controller, d.schedule(), tr.x0, tr.excitation, borrow(model));
}

std::array<double, 3> target_of(const TrajectoryData &tr, std::size_t k, Target t) {
    return t == Target::Measured ? tr.y[k] : tr.p_true(k);
}

/// Σₖ ‖ŷ[k] − target[k]‖² of one trajectory.
double trajectory_sse(const std::vector<std::array<double, 3>> &yhat, const TrajectoryData &tr, Target t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < yhat.size(); ++k) {
        const auto y = target_of(tr, k, t);
        for (std::size_t c = 0; c < 3; ++c) {
            const double e = yhat[k][c] - y[c];
            acc += e * e;
        }
    }
    return acc;
}

void check_theta(const std::vector<double> &theta) {
    for (double v : theta)
        if (!std::isfinite(v))
            throw OptimizerError("θ contains a non-finite entry");
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write " + path.string());
    out << text;
    if (!out)
        throw Error("write failed for " + path.string());
}

json read_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::vector<std::string> split_csv(const std::string &line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    return out;
}

double parse_double(const std::string &s, const std::string &where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size())
            throw std::invalid_argument(s);
        return v;
    } catch (const std::exception &) {
        throw DataError("cannot parse number '" + s + "' in " + where);
    }
}

std::string trajectory_file(bool test, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03zu.csv", test ? "test" : "train", i);
    return buf;
}

std::string trajectory_header() {
    std::string h = "t";
    for (int i = 1; i <= 12; ++i) h += ",x" + std::to_string(i);
    for (int i = 1; i <= 12; ++i) h += ",r" + std::to_string(i);
    for (int i = 1; i <= 4; ++i) h += ",rn" + std::to_string(i);
    for (int i = 1; i <= 3; ++i) h += ",y" + std::to_string(i);
    for (int i = 1; i <= 3; ++i) h += ",p" + std::to_string(i);
    for (int i = 1; i <= 3; ++i) h += ",v" + std::to_string(i);
    return h;
}

json params_to_json(const PhysParams &p) {
    return json{{"m", p.m},       {"g", p.g}, {"inertia", p.inertia}, {"b", p.b},
                {"d", p.d},       {"l", p.l}, {"wind", p.wind},       {"drag", p.drag}};
}

PhysParams params_from_json(const json &j) {
    PhysParams p;
    p.m = j.at("m").get<double>();
    p.g = j.at("g").get<double>();
    p.inertia = j.at("inertia").get<quad::Vec3<double>>();
    p.b = j.at("b").get<double>();
    p.d = j.at("d").get<double>();
    p.l = j.at("l").get<double>();
    p.wind = j.at("wind").get<quad::Vec3<double>>();
    p.drag = j.at("drag").get<quad::Vec3<double>>();
    p.validate();
    return p;
}

json controller_to_json(const quad::ControllerSpec &c) {
    return json{{"omega0", c.omega0}, {"gain", c.gain}, {"period", c.period},
                {"closed_loop_radius", c.closed_loop_radius}};
}

quad::ControllerSpec controller_from_json(const json &j) {
    quad::ControllerSpec c;
    c.omega0 = j.at("omega0").get<std::array<double, kControlDim>>();
    c.gain = j.at("gain").get<std::array<std::array<double, kStateDim>, kControlDim>>();
    c.period = j.at("period").get<double>();
    c.closed_loop_radius = j.at("closed_loop_radius").get<double>();
    return c;
}

} // namespace

// ---------------------------------------------------------------- dataset

Dataset generate_dataset(const Profile &profile, std::uint64_t seed, const PhysParams &params) {
    params.validate();
    Dataset d;
    d.profile = profile_from_json(profile_to_json(profile), profile); // validates
    d.seed = seed;
    d.params = params;
    d.controller = quad::design_controller(params, profile.period);
    const std::size_t total = profile.train_trajectories + profile.test_trajectories;
    for (std::size_t g = 0; g < total; ++g) {
        const bool test = g >= profile.train_trajectories;
        std::optional<TrajectoryData> tr;
        for (std::uint64_t attempt = 0; attempt < profile.max_attempts && !tr; ++attempt) {
            try {
                tr = draw_trajectory(d, g, attempt, test);
            } catch (const Error &e) {
                d.log.push_back("trajectory " + std::to_string(g) + " attempt " + std::to_string(attempt) +
                                " resampled: " + e.what());
            }
        }
        if (!tr)
            throw DataError("trajectory " + std::to_string(g) + " failed " + std::to_string(profile.max_attempts) +
                            " sampling attempts");
        (test ? d.test : d.train).push_back(std::move(*tr));
    }
    return d;
}

void save_dataset(const Dataset &d, const std::string &dir) {
    fs::create_directories(dir);
    json meta;
    meta["seed"] = d.seed;
    meta["profile"] = profile_to_json(d.profile);
    meta["schedule"] = {{"start", 0.0}, {"period", d.profile.period}, {"samples", d.samples()}};
    meta["params"] = params_to_json(d.params);
    meta["controller"] = controller_to_json(d.controller);
    json trajs = json::array();
    for (bool test : {false, true}) {
        const auto &set = test ? d.test : d.train;
        for (std::size_t i = 0; i < set.size(); ++i)
            trajs.push_back({{"file", trajectory_file(test, i)}, {"test", test}, {"attempt", set[i].attempt},
                             {"x0", set[i].x0}});
    }
    meta["trajectories"] = trajs;
    meta["log"] = d.log;
    write_text(fs::path(dir) / "meta.json", meta.dump(1) + "\n");

    const auto times = d.schedule().times();
    for (bool test : {false, true}) {
        const auto &set = test ? d.test : d.train;
        for (std::size_t i = 0; i < set.size(); ++i) {
            const auto &tr = set[i];
            std::string out = trajectory_header() + "\n";
            for (std::size_t k = 0; k < times.size(); ++k) {
                out += fmt17(times[k]);
                for (double v : tr.x_true[k]) out += "," + fmt17(v);
                for (double v : tr.excitation->r[k]) out += "," + fmt17(v);
                for (double v : tr.excitation->rn[k]) out += "," + fmt17(v);
                for (double v : tr.y[k]) out += "," + fmt17(v);
                for (double v : tr.p_true(k)) out += "," + fmt17(v);
                for (double v : tr.v_true(k)) out += "," + fmt17(v);
                out += "\n";
            }
            write_text(fs::path(dir) / trajectory_file(test, i), out);
        }
    }
}

Dataset load_dataset(const std::string &dir) {
    const json meta = read_json(fs::path(dir) / "meta.json");
    Dataset d;
    try {
        d.seed = meta.at("seed").get<std::uint64_t>();
        d.profile = profile_from_json(meta.at("profile"), Profile{});
        d.params = params_from_json(meta.at("params"));
        d.controller = controller_from_json(meta.at("controller"));
        if (meta.contains("log"))
            d.log = meta.at("log").get<std::vector<std::string>>();
    } catch (const json::exception &e) {
        throw DataError("meta.json: " + std::string(e.what()));
    }
    const std::size_t n = d.samples();
    const std::string header = trajectory_header();
    for (const auto &entry : meta.at("trajectories")) {
        TrajectoryData tr;
        const std::string file = entry.at("file").get<std::string>();
        tr.test = entry.at("test").get<bool>();
        tr.attempt = entry.at("attempt").get<std::uint64_t>();
        tr.x0 = entry.at("x0").get<std::array<double, kStateDim>>();
        const fs::path path = fs::path(dir) / file;
        std::ifstream in(path);
        if (!in)
            throw DataError("missing trajectory file " + path.string());
        std::string line;
        std::getline(in, line);
        if (line != header)
            throw DataError(path.string() + ": unexpected header");
        auto ex = std::make_shared<Excitation>();
        while (std::getline(in, line)) {
            if (line.empty())
                continue;
            const auto cells = split_csv(line);
            if (cells.size() != 1 + 12 + 12 + 4 + 3 + 3 + 3)
                throw DataError(path.string() + ": row has " + std::to_string(cells.size()) + " columns");
            std::size_t c = 1;
            std::array<double, kStateDim> x{}, r{};
            std::array<double, kControlDim> rn{};
            std::array<double, 3> y{};
            for (auto &v : x) v = parse_double(cells[c++], path.string());
            for (auto &v : r) v = parse_double(cells[c++], path.string());
            for (auto &v : rn) v = parse_double(cells[c++], path.string());
            for (auto &v : y) v = parse_double(cells[c++], path.string());
            tr.x_true.push_back(x);
            ex->r.push_back(r);
            ex->rn.push_back(rn);
            tr.y.push_back(y);
        }
        if (tr.x_true.size() != n)
            throw DataError(path.string() + ": expected " + std::to_string(n) + " rows, found " +
                            std::to_string(tr.x_true.size()));
        tr.excitation = ex;
        (tr.test ? d.test : d.train).push_back(std::move(tr));
    }
    if (d.train.size() != d.profile.train_trajectories || d.test.size() != d.profile.test_trajectories)
        throw DataError("trajectory count in meta.json does not match the profile");
    return d;
}

// ---------------------------------------------------------------- prediction and loss

std::vector<std::array<double, 3>> predict_outputs(const Parameterization &model, std::span<const double> theta,
                                                   const Dataset &data, Split split, std::size_t index) {
    const auto &set = split_of(data, split);
    if (index >= set.size())
        throw ConfigError("trajectory index " + std::to_string(index) + " out of range");
    if (theta.size() != model.size())
        throw ConfigError("θ length does not match the model layout");
    const auto sched = data.schedule();
    try {
        const auto sys = model_loop<double>(model, data, set[index]);
        const auto traj = adaptive_solve<double>(sys, theta, 0.0, sched.end(), sched.times(), data.profile.solver());
        std::vector<std::array<double, 3>> out(traj.states.size());
        for (std::size_t k = 0; k < out.size(); ++k)
            for (std::size_t c = 0; c < 3; ++c)
                out[k][c] = traj.states[k][quad::kPos + c];
        return out;
    } catch (const TrajectoryError &) {
        throw;
    } catch (const Error &e) {
        throw TrajectoryError(e.what(), index);
    }
}

double loss(const Parameterization &model, std::span<const double> theta, const Dataset &data,
            const LossOptions &opts) {
    const auto &set = split_of(data, opts.split);
    if (set.empty())
        throw DataError("loss needs at least one trajectory");
    std::vector<double> sse(set.size());
    parallel_for(set.size(), opts.jobs, [&](std::size_t i) {
        sse[i] = trajectory_sse(predict_outputs(model, theta, data, opts.split, i), set[i], opts.target);
    });
    double total = 0.0;
    for (double s : sse)
        total += s;
    return total / static_cast<double>(set.size() * data.samples());
}

LossGradient loss_and_gradient(const Parameterization &model, std::span<const double> theta, const Dataset &data,
                               std::size_t jobs) {
    const auto &set = data.train;
    if (set.empty())
        throw DataError("loss needs at least one training trajectory");
    if (theta.size() != model.size())
        throw ConfigError("θ length does not match the model layout");
    const std::size_t n = data.samples();
    const double scale = 1.0 / static_cast<double>(set.size() * n);
    const auto sched = data.schedule();
    const auto times = sched.times();
    SolverOptions opts = data.profile.solver();
    opts.record = true;

    std::vector<double> sse(set.size());
    std::vector<std::vector<double>> grads(set.size());
    parallel_for(set.size(), jobs, [&](std::size_t i) {
        try {
            const auto sys = model_loop<double>(model, data, set[i]);
            const auto traj = adaptive_solve<double>(sys, theta, 0.0, sched.end(), times, opts);
            std::vector<std::array<double, 3>> yhat(n);
            std::vector<std::vector<double>> adj(n, std::vector<double>(quad::kAugmentedDim, 0.0));
            for (std::size_t k = 0; k < n; ++k) {
                for (std::size_t c = 0; c < 3; ++c) {
                    yhat[k][c] = traj.states[k][quad::kPos + c];
                    adj[k][quad::kPos + c] = 2.0 * (yhat[k][c] - set[i].y[k][c]) * scale;
                }
            }
            sse[i] = trajectory_sse(yhat, set[i], Target::Measured);
            const auto vsys = model_loop<Var>(model, data, set[i]);
            grads[i] = solve_vjp(vsys, theta, traj, adj);
        } catch (const TrajectoryError &) {
            throw;
        } catch (const Error &e) {
            throw TrajectoryError(e.what(), i);
        }
    });
    LossGradient out;
    double total = 0.0;
    for (double s : sse)
        total += s;
    out.loss = total / static_cast<double>(set.size() * n);
    out.gradient.assign(theta.size(), 0.0);
    for (const auto &g : grads)
        for (std::size_t j = 0; j < g.size(); ++j)
            out.gradient[j] += g[j];
    return out;
}

GradientCheck gradient_check(const Parameterization &model, std::span<const double> theta, const Dataset &data,
                             double eps, std::vector<std::size_t> coords, std::size_t jobs, double tol,
                             std::size_t refinements) {
    if (!(eps > 0.0))
        throw ConfigError("finite-difference step must be positive");
    if (coords.empty())
        for (std::size_t i = 0; i < theta.size(); ++i)
            coords.push_back(i);
    for (std::size_t i : coords)
        if (i >= theta.size())
            throw ConfigError("gradient-check coordinate out of range");
    const LossOptions lo{Split::Train, Target::Measured, jobs};
    GradientCheck out;
    const LossGradient lg = loss_and_gradient(model, theta, data, jobs);
    const double l0 = loss(model, theta, data, lo);
    double g_scale = 0.0;
    for (std::size_t i : coords)
        g_scale = std::max(g_scale, std::abs(lg.gradient[i]));
    std::vector<double> th(theta.begin(), theta.end());
    for (std::size_t i : coords) {
        const double saved = th[i];
        double h = eps, used = eps, cd = 0.0;
        bool smooth = false;
        for (std::size_t r = 0; r <= refinements && !smooth; ++r, h /= 10.0) {
            th[i] = saved + h;
            const double up = loss(model, th, data, lo);
            th[i] = saved - h;
            const double down = loss(model, th, data, lo);
            th[i] = saved;
            cd = (up - down) / (2.0 * h);
            used = h;
            smooth = std::abs((up - l0) / h - (l0 - down) / h) <= tol * g_scale;
        }
        out.eps_used.push_back(used);
        out.fd.push_back(cd);
        out.adjoint.push_back(lg.gradient[i]);
        out.smooth.push_back(smooth);
    }
    double scale = 0.0, worst = 0.0;
    for (std::size_t j = 0; j < coords.size(); ++j) {
        if (!out.smooth[j]) {
            ++out.non_smooth;
            continue;
        }
        scale = std::max(scale, std::abs(out.fd[j]));
        worst = std::max(worst, std::abs(out.adjoint[j] - out.fd[j]));
    }
    out.coords = std::move(coords);
    out.max_rel = scale > 0.0 ? worst / scale : worst;
    return out;
}

// ---------------------------------------------------------------- drag error

double drag_relative_error(std::span<const std::array<double, 3>> estimated,
                           std::span<const std::array<double, 3>> truth) {
    if (estimated.size() != truth.size())
        throw ConfigError("drag sample counts differ");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            const double e = estimated[i][c] - truth[i][c];
            num += e * e;
            den += truth[i][c] * truth[i][c];
        }
    }
    if (!(den > 0.0))
        throw DataError("true drag is identically zero on the evaluation data");
    return std::sqrt(num / den);
}

double drag_relative_error(const Parameterization &model, std::span<const double> theta, const Dataset &data,
                           Split split) {
    std::vector<std::array<double, 3>> est, truth;
    for (const auto &tr : split_of(data, split)) {
        for (const auto &x : tr.x_true) {
            const quad::Vec3<double> eta{x[0], x[1], x[2]};
            const quad::Vec3<double> v{x[6], x[7], x[8]};
            truth.push_back(quad::true_drag(v, eta, data.params));
            est.push_back(model.drag<double>(theta, v, eta));
        }
    }
    return drag_relative_error(est, truth);
}

// ---------------------------------------------------------------- metrics

Metrics evaluate(const Parameterization &model, std::span<const double> theta, const Dataset &data,
                 std::size_t jobs) {
    Metrics m;
    m.loss_noisy_train = loss(model, theta, data, {Split::Train, Target::Measured, jobs});
    m.rmse_noisy_train = rmse_from_loss(m.loss_noisy_train);
    m.rmse_clean_train = rmse_from_loss(loss(model, theta, data, {Split::Train, Target::True, jobs}));
    m.rmse_test = rmse_from_loss(loss(model, theta, data, {Split::Test, Target::Measured, jobs}));
    m.drag_train = drag_relative_error(model, theta, data, Split::Train);
    m.drag_test = drag_relative_error(model, theta, data, Split::Test);
    const auto I = model.inertia<double>(theta);
    for (std::size_t c = 0; c < 3; ++c)
        m.inertia_rel[c] = std::abs(I[c] - data.params.inertia[c]) / data.params.inertia[c];
    const auto &layout = model.layout();
    auto rel = [&](const char *name, const quad::Vec3<double> &truth) {
        const auto seg = segment_of(layout, theta, name);
        std::array<double, 3> out{};
        for (std::size_t c = 0; c < 3; ++c)
            out[c] = std::abs(seg[c] - truth[c]) / std::abs(truth[c]);
        return out;
    };
    if (layout.contains("k"))
        m.drag_coeff_rel = rel("k", data.params.drag);
    if (layout.contains("w"))
        m.wind_rel = rel("w", data.params.wind);
    return m;
}

json metrics_to_json(const Metrics &m) {
    json j{{"loss_noisy_train", m.loss_noisy_train},
           {"rmse_noisy_train", m.rmse_noisy_train},
           {"rmse_clean_train", m.rmse_clean_train},
           {"rmse_test", m.rmse_test},
           {"drag_train", m.drag_train},
           {"drag_test", m.drag_test},
           {"inertia_rel", m.inertia_rel}};
    if (m.drag_coeff_rel)
        j["drag_coeff_rel"] = *m.drag_coeff_rel;
    if (m.wind_rel)
        j["wind_rel"] = *m.wind_rel;
    return j;
}

Metrics metrics_from_json(const json &j) {
    Metrics m;
    m.loss_noisy_train = j.at("loss_noisy_train").get<double>();
    m.rmse_noisy_train = j.at("rmse_noisy_train").get<double>();
    m.rmse_clean_train = j.at("rmse_clean_train").get<double>();
    m.rmse_test = j.at("rmse_test").get<double>();
    m.drag_train = j.at("drag_train").get<double>();
    m.drag_test = j.at("drag_test").get<double>();
    m.inertia_rel = j.at("inertia_rel").get<std::array<double, 3>>();
    if (j.contains("drag_coeff_rel"))
        m.drag_coeff_rel = j.at("drag_coeff_rel").get<std::array<double, 3>>();
    if (j.contains("wind_rel"))
        m.wind_rel = j.at("wind_rel").get<std::array<double, 3>>();
    return m;
}

// ---------------------------------------------------------------- training

std::vector<double> step_scales(const Parameterization &model) {
    std::vector<double> s(model.size(), 1.0);
    for (const auto &seg : model.layout().segments()) {
        double f = 1.0;
        if (seg.name == "k")
            f = 0.01;
        else if (seg.name.rfind("nn", 0) == 0)
            f = 0.1;
        std::fill_n(s.begin() + static_cast<std::ptrdiff_t>(seg.offset), seg.size, f);
    }
    return s;
}

std::uint64_t restart_seed(std::uint64_t seed, std::size_t restart) { return mix64(seed ^ mix64(restart + 1)); }

namespace {

std::string checkpoint_name(UncertaintyModel kind, std::size_t restart) {
    return "model" + std::to_string(static_cast<int>(kind)) + "_restart" + std::to_string(restart) + ".json";
}

RestartResult run_restart(const Dataset &data, const Parameterization &model, const TrainConfig &cfg,
                          std::size_t r) {
    RestartResult res;
    res.index = r;
    res.seed = restart_seed(cfg.seed, r);
    std::vector<double> theta = model.initial_guess(res.seed);
    const auto scales = step_scales(model);
    AdamState adam(theta.size());
    res.best_loss = std::numeric_limits<double>::infinity();
    res.theta = theta;
    AdamState best_adam = adam;
    auto consider = [&](double l, std::size_t it) {
        if (!std::isfinite(l))
            throw OptimizerError("non-finite loss at iteration " + std::to_string(it));
        res.history.push_back(l);
        if (l < res.best_loss) {
            res.best_loss = l;
            res.best_iteration = it;
            res.theta = theta;
            best_adam = adam;
        }
        if (cfg.progress)
            cfg.progress(r, it, l);
    };
    try {
        for (std::size_t it = 0; it < cfg.iterations; ++it) {
            const LossGradient lg = loss_and_gradient(model, theta, data, cfg.jobs);
            consider(lg.loss, it);
            adam_step(adam, theta, lg.gradient, lr_schedule(it), &model.layout(), scales);
            check_theta(theta);
        }
        consider(loss(model, theta, data, {Split::Train, Target::Measured, cfg.jobs}), cfg.iterations);
        res.metrics = evaluate(model, res.theta, data, cfg.jobs);
    } catch (const Error &e) {
        res.failed = true;
        res.failure = e.what();
    }
    if (!cfg.checkpoint_dir.empty()) {
        Checkpoint c;
        c.theta.layout = model.layout();
        c.theta.values = res.theta;
        c.adam = best_adam;
        c.meta = {{"model", static_cast<int>(cfg.kind)},
                  {"restart", r},
                  {"seed", res.seed},
                  {"failed", res.failed},
                  {"failure", res.failure},
                  {"best_loss", res.best_loss},
                  {"best_iteration", res.best_iteration},
                  {"history", res.history}};
        if (res.metrics)
            c.meta["metrics"] = metrics_to_json(*res.metrics);
        save_checkpoint((fs::path(cfg.checkpoint_dir) / checkpoint_name(cfg.kind, r)).string(), c);
    }
    return res;
}

} // namespace

RunResult train(const Dataset &data, const TrainConfig &cfg) {
    if (cfg.restarts == 0)
        throw ConfigError("at least one restart is required");
    if (cfg.iterations == 0)
        throw ConfigError("at least one iteration is required");
    if (!cfg.checkpoint_dir.empty())
        fs::create_directories(cfg.checkpoint_dir);
    const Parameterization model(cfg.kind);
    RunResult run;
    run.kind = cfg.kind;
    for (std::size_t r = 0; r < cfg.restarts; ++r)
        run.restarts.push_back(run_restart(data, model, cfg, r));
    return run;
}

json run_to_json(const RunResult &run) {
    json rs = json::array();
    for (const auto &r : run.restarts) {
        json j{{"index", r.index},
               {"seed", r.seed},
               {"failed", r.failed},
               {"failure", r.failure},
               {"history", r.history},
               {"best_loss", r.best_loss},
               {"best_iteration", r.best_iteration},
               {"theta", r.theta}};
        if (r.metrics)
            j["metrics"] = metrics_to_json(*r.metrics);
        rs.push_back(std::move(j));
    }
    return json{{"model", static_cast<int>(run.kind)}, {"restarts", rs}};
}

RunResult run_from_json(const json &j) {
    RunResult run;
    run.kind = quad::model_from_int(j.at("model").get<int>());
    for (const auto &e : j.at("restarts")) {
        RestartResult r;
        r.index = e.at("index").get<std::size_t>();
        r.seed = e.at("seed").get<std::uint64_t>();
        r.failed = e.at("failed").get<bool>();
        r.failure = e.at("failure").get<std::string>();
        r.history = e.at("history").get<std::vector<double>>();
        r.best_loss = e.at("best_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                  : e.at("best_loss").get<double>();
        r.best_iteration = e.at("best_iteration").get<std::size_t>();
        r.theta = e.at("theta").get<std::vector<double>>();
        if (e.contains("metrics"))
            r.metrics = metrics_from_json(e.at("metrics"));
        run.restarts.push_back(std::move(r));
    }
    return run;
}

// ---------------------------------------------------------------- reporting

namespace {

const std::vector<std::string> &table_rows() {
    static const std::vector<std::string> rows{"rmse_noisy_train", "rmse_clean_train", "rmse_test",
                                               "drag_train_rel",   "drag_test_rel",    "inertia1_rel",
                                               "inertia2_rel",     "inertia3_rel"};
    return rows;
}

std::vector<double> row_values(const Metrics &m) {
    return {m.rmse_noisy_train, m.rmse_clean_train, m.rmse_test,      m.drag_train,
            m.drag_test,        m.inertia_rel[0],   m.inertia_rel[1], m.inertia_rel[2]};
}

} // namespace

Table summarize(const std::vector<RunResult> &runs) {
    Table t;
    t.rows = table_rows();
    for (const auto &run : runs) {
        const std::string col = "model" + std::to_string(static_cast<int>(run.kind));
        if (t.values.count(col))
            throw ConfigError("two runs for " + col);
        std::vector<std::vector<double>> per_row(t.rows.size());
        for (const auto &r : run.restarts) {
            if (r.failed || !r.metrics)
                continue;
            const auto v = row_values(*r.metrics);
            for (std::size_t i = 0; i < v.size(); ++i)
                per_row[i].push_back(v[i]);
        }
        if (per_row[0].empty())
            throw DataError(col + " has no successful restart");
        std::vector<Triple> triples;
        for (const auto &vals : per_row) {
            Triple tr;
            tr.min = *std::min_element(vals.begin(), vals.end());
            tr.max = *std::max_element(vals.begin(), vals.end());
            double s = 0.0;
            for (double v : vals)
                s += v;
            tr.mean = s / static_cast<double>(vals.size());
            triples.push_back(tr);
        }
        t.columns.push_back(col);
        t.values[col] = std::move(triples);
    }
    std::sort(t.columns.begin(), t.columns.end());
    return t;
}

void write_table_csv(const Table &t, const std::string &path) {
    std::string out = "metric";
    for (const auto &c : t.columns)
        out += "," + c + "_min," + c + "_mean," + c + "_max";
    out += "\n";
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        out += t.rows[i];
        for (const auto &c : t.columns) {
            const Triple &tr = t.values.at(c)[i];
            out += "," + fmt17(tr.min) + "," + fmt17(tr.mean) + "," + fmt17(tr.max);
        }
        out += "\n";
    }
    write_text(path, out);
}

Table read_table_csv(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw Error("cannot read " + path);
    std::string line;
    std::getline(in, line);
    const auto head = split_csv(line);
    if (head.empty() || head[0] != "metric" || (head.size() - 1) % 3 != 0)
        throw DataError(path + ": malformed header");
    Table t;
    for (std::size_t c = 1; c < head.size(); c += 3) {
        const std::string name = head[c].substr(0, head[c].rfind('_'));
        t.columns.push_back(name);
        t.values[name];
    }
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto cells = split_csv(line);
        if (cells.size() != head.size())
            throw DataError(path + ": row width mismatch");
        t.rows.push_back(cells[0]);
        for (std::size_t c = 0; c < t.columns.size(); ++c)
            t.values[t.columns[c]].push_back({parse_double(cells[1 + 3 * c], path),
                                              parse_double(cells[2 + 3 * c], path),
                                              parse_double(cells[3 + 3 * c], path)});
    }
    return t;
}

DragCurve drag_curve(const Parameterization &model, std::span<const double> theta, const PhysParams &params,
                     std::size_t axis, double v_max, std::size_t points) {
    if (axis > 2 || points < 2)
        throw ConfigError("drag curve needs axis in 0..2 and at least two points");
    const quad::Vec3<double> zero{0.0, 0.0, 0.0};
    std::vector<double> th(theta.begin(), theta.end());
    quad::Vec3<double> wind = params.wind;
    if (model.kind() != UncertaintyModel::BlackBox) {
        // Model 1 at w = 0; Model 2 against the relative air speed, so ŵ and w drop out.
        wind = zero;
        auto w = model.layout().segment("w");
        std::fill_n(th.begin() + static_cast<std::ptrdiff_t>(w.offset), 3, 0.0);
    }
    DragCurve c;
    for (std::size_t i = 0; i < points; ++i) {
        const double s = -v_max + 2.0 * v_max * static_cast<double>(i) / static_cast<double>(points - 1);
        quad::Vec3<double> v = zero;
        v[axis] = s;
        c.v.push_back(s);
        c.d_true.push_back(quad::quadratic_drag(v, zero, wind, params.drag)[axis]);
        c.d_hat.push_back(model.drag<double>(th, v, zero)[axis]);
    }
    return c;
}

void write_report(const std::vector<RunResult> &runs, const Dataset &data, const std::string &dir) {
    fs::create_directories(dir);
    write_table_csv(summarize(runs), (fs::path(dir) / "table3.csv").string());

    const RunResult *example = nullptr;
    for (const auto &run : runs) {
        const int k = static_cast<int>(run.kind);
        const RestartResult *best = nullptr;
        for (const auto &r : run.restarts)
            if (!r.failed && r.metrics && (!best || r.best_loss < best->best_loss))
                best = &r;
        if (!best)
            continue;
        if (!example || run.kind < example->kind)
            example = &run;
        const Parameterization model(run.kind);
        for (std::size_t axis = 0; axis < 3; ++axis) {
            const auto c = drag_curve(model, best->theta, data.params, axis);
            std::string out = "v,d_true,d_hat\n";
            for (std::size_t i = 0; i < c.v.size(); ++i)
                out += fmt17(c.v[i]) + "," + fmt17(c.d_true[i]) + "," + fmt17(c.d_hat[i]) + "\n";
            write_text(fs::path(dir) / ("drag_curves_model" + std::to_string(k) + "_axis" +
                                        std::to_string(axis + 1) + ".csv"),
                       out);
        }
    }
    if (example) {
        const RestartResult *best = nullptr;
        for (const auto &r : example->restarts)
            if (!r.failed && r.metrics && (!best || r.best_loss < best->best_loss))
                best = &r;
        const Parameterization model(example->kind);
        const auto yhat = predict_outputs(model, best->theta, data, Split::Train, 0);
        const auto times = data.schedule().times();
        std::string out = "t,y1,y2,y3,yhat1,yhat2,yhat3\n";
        for (std::size_t k = 0; k < times.size(); ++k) {
            out += fmt17(times[k]);
            for (double v : data.train[0].y[k]) out += "," + fmt17(v);
            for (double v : yhat[k]) out += "," + fmt17(v);
            out += "\n";
        }
        write_text(fs::path(dir) / "trajectory_example.csv", out);
    }
}

} // namespace hysid::experiment
