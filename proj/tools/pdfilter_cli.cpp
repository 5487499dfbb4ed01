// pdfilter command-line driver. Every command writes its artifacts and a
// manifest.json into the output directory; `pdfilter replay --manifest F`
// reruns a command from a manifest.

#include <pdfilter/pdfilter.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

namespace fs = std::filesystem;
using namespace pdfilter;
using io::json;

namespace {

constexpr const char* kOutEnv = "PDFILTER_OUT_DIR";
constexpr const char* kDefaultOut = "pdfilter_out";

// Raw command-line values; unset options keep their command defaults.
struct Flags {
    std::string model;
    std::string out;
    std::uint64_t seed = 1;
    double horizon = 0;
    std::size_t sims = 0;
    std::size_t grid = 0;
    double tol = 0;
    double dt = 0;
    std::size_t max_iterations = 0;
    std::vector<std::string> subset;
    std::string start;
    std::string manifest;
    std::map<std::string, CLI::Option*> given;

    bool has(const std::string& name) const {
        auto it = given.find(name);
        return it != given.end() && it->second->count() > 0;
    }
};

struct Run {
    std::string command;
    std::string model_file;
    json model_doc;
    json config;  // resolved parameters
    fs::path out;
    std::vector<std::string> outputs;
};

fs::path output_dir(const Flags& f) {
    if (!f.out.empty()) return f.out;
    if (const char* env = std::getenv(kOutEnv); env && *env) return env;
    return kDefaultOut;
}

std::ofstream open_output(Run& run, const std::string& name) {
    fs::create_directories(run.out);
    std::ofstream os(run.out / name, std::ios::binary);
    if (!os) throw Error(ErrorCode::InvalidArgument, "cannot write '" + (run.out / name).string() + "'");
    run.outputs.push_back(name);
    return os;
}

void write_json(Run& run, const std::string& name, const json& doc) { open_output(run, name) << doc.dump(2) << '\n'; }

void write_manifest(Run& run) {
    json m;
    m["tool"] = "pdfilter";
    m["version"] = kVersion;
    m["command"] = run.command;
    m["model_file"] = run.model_file;
    m["config"] = run.config;
    m["model"] = run.model_doc;
    m["outputs"] = run.outputs;
    fs::create_directories(run.out);
    std::ofstream(run.out / "manifest.json", std::ios::binary) << m.dump(2) << '\n';
}

Distribution initial_law(const json& doc, const Model& model, const char* key = "initial") {
    if (!doc.contains(key)) return Distribution(RowVector::Constant(static_cast<Eigen::Index>(model.num_states()),
                                                                    1.0 / static_cast<double>(model.num_states())));
    return Distribution(io::row_from_json(doc.at(key), model.num_states(), key));
}

StateIndex state_named(const Model& model, const std::string& name) {
    auto i = model.find_state(name);
    if (!i) throw Error(ErrorCode::InvalidArgument, "unknown state '" + name + "'");
    return *i;
}

std::vector<double> time_grid(double horizon, double dt) {
    if (!(horizon > 0.0) || !(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "horizon and dt must be positive");
    const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
    std::vector<double> out;
    for (std::size_t k = 0; k <= steps; ++k) out.push_back(std::min(horizon, dt * static_cast<double>(k)));
    return out;
}

json point_json(const FacePoint& p) { return io::to_json(p.weights); }

// ---- commands --------------------------------------------------------------

int cmd_validate(Run& run, bool write) {
    const auto model = io::model_from_json(run.model_doc);
    initial_law(run.model_doc, model);
    io::stopping_from_json(run.model_doc, model);
    std::cout << "valid: " << model.num_states() << " states, " << model.num_labels() << " labels\n";
    if (write) {
        json report{{"valid", true},
                    {"states", model.num_states()},
                    {"labels", model.observation().labels()},
                    {"injective", model.observation().injective()}};
        write_json(run, "validation.json", report);
        write_manifest(run);
    }
    return 0;
}

int cmd_simulate(Run& run) {
    const auto model = io::model_from_json(run.model_doc);
    const auto mu = initial_law(run.model_doc, model);
    const double horizon = run.config.at("horizon");
    const double dt = run.config.at("dt");
    const std::uint64_t seed = run.config.at("seed");

    RandomSource rng(seed, 0);
    const auto path = sample_chain(model.generator(), mu, horizon, rng);
    const auto obs = observe(path, model.observation());
    {
        auto os = open_output(run, "chain.csv");
        io::write_path_csv(os, path, model.state_names());
    }
    {
        auto os = open_output(run, "observation.csv");
        io::write_path_csv(os, obs, model.observation().labels());
    }
    json summary{{"chain_jumps", path.jumps.size()}, {"observation_jumps", obs.jumps.size()}};
    if (model.num_labels() >= 2) {
        RandomSource pdp_rng(seed, 1);
        std::vector<double> mass(model.num_labels());
        for (LabelIndex a = 0; a < model.num_labels(); ++a)
            mass[a] = mu.weights().dot(model.face_indicator(a).transpose());
        const auto a = pdp_rng.categorical(mass, 1.0);
        const auto traj = simulate_pdp(model, restrict_normalize(model, mu.weights(), a).point, horizon, pdp_rng);
        auto os = open_output(run, "pdp.csv");
        io::write_trajectory_csv(os, model, traj, dt);
        summary["pdp_jumps"] = traj.jumps.size();
    }
    write_json(run, "summary.json", summary);
    write_manifest(run);
    return 0;
}

int cmd_filter(Run& run) {
    const auto model = io::model_from_json(run.model_doc);
    const auto mu = initial_law(run.model_doc, model);
    const double horizon = run.config.at("horizon");
    const double dt = run.config.at("dt");
    RandomSource rng(run.config.at("seed").get<std::uint64_t>(), 0);

    const auto path = sample_chain(model.generator(), mu, horizon, rng);
    const auto obs = observe(path, model.observation());
    const auto traj = run_filter(model, obs, mu);
    {
        auto os = open_output(run, "chain.csv");
        io::write_path_csv(os, path, model.state_names());
    }
    {
        auto os = open_output(run, "observation.csv");
        io::write_path_csv(os, obs, model.observation().labels());
    }
    {
        auto os = open_output(run, "filter.csv");
        io::write_trajectory_csv(os, model, traj, dt);
    }
    bool on_face = true, one_hot = true;
    auto check = [&](double t, const FacePoint& p) {
        on_face = on_face && p.label == obs.value_at(t) && is_face_point(model, p);
        one_hot = one_hot && p.weights.maxCoeff() == 1.0;
    };
    for (double t : time_grid(horizon, dt)) check(t, traj.at(model, t));
    for (const auto& j : traj.jumps) check(j.time, j.post);
    json summary{{"chain_jumps", path.jumps.size()},
                 {"observation_jumps", obs.jumps.size()},
                 {"supported_on_observed_face", on_face},
                 {"final_filter", point_json(traj.at(model, horizon))}};
    if (model.observation().injective()) summary["one_hot"] = one_hot;
    write_json(run, "summary.json", summary);
    write_manifest(run);
    return 0;
}

int cmd_exit_time(Run& run) {
    const auto model = io::model_from_json(run.model_doc);
    IndexSet subset;
    for (const auto& name : run.config.at("subset")) subset.push_back(state_named(model, name.get<std::string>()));
    std::sort(subset.begin(), subset.end());
    const StateIndex start = state_named(model, run.config.at("start").get<std::string>());
    const auto times = time_grid(run.config.at("horizon"), run.config.at("dt"));

    const auto nonlinear = exit_survival_curve(model.generator(), subset, start, times);
    double worst = 0.0;
    auto os = open_output(run, "exit_time.csv");
    os << "t,nonlinear,oracle,abs_diff\n";
    for (std::size_t k = 0; k < times.size(); ++k) {
        const double oracle = exit_survival_oracle(model.generator(), subset, start, times[k]);
        const double diff = std::abs(nonlinear[k] - oracle);
        worst = std::max(worst, diff);
        os << io::format_double(times[k]) << ',' << io::format_double(nonlinear[k]) << ','
           << io::format_double(oracle) << ',' << io::format_double(diff) << '\n';
    }
    os.close();
    write_json(run, "summary.json", {{"max_abs_diff", worst}, {"points", times.size()}});
    write_manifest(run);
    return 0;
}

int cmd_pdp_check(Run& run) {
    const auto model = io::model_from_json(run.model_doc);
    const auto mu = initial_law(run.model_doc, model);
    LawCheckOptions opts;
    opts.n_sims = run.config.at("sims");
    opts.horizon = run.config.at("horizon");
    opts.seed = run.config.at("seed");
    // the sup deviation over the survival grid is held to 4 worst-case standard errors at small sample sizes
    opts.survival_tol = std::max(0.01, opts.z * 0.5 / std::sqrt(static_cast<double>(opts.n_sims)));
    const auto rows = pdp_law_check(model, mu, opts);
    json stats = json::array();
    bool all = true;
    for (const auto& r : rows) {
        stats.push_back({{"statistic", r.statistic},
                         {"empirical", r.empirical},
                         {"analytic", r.analytic},
                         {"stderr", r.std_error},
                         {"pass", r.pass}});
        all = all && r.pass;
    }
    write_json(run, "pdp_check.json", {{"statistics", stats}, {"all_pass", all}});
    write_manifest(run);
    std::cout << (all ? "all statistics pass\n" : "some statistics fail\n");
    return 0;
}

int cmd_stop(Run& run) {
    const auto model = io::model_from_json(run.model_doc);
    const auto mu = initial_law(run.model_doc, model);
    const auto section = io::stopping_from_json(run.model_doc, model);
    if (!section) throw Error(ErrorCode::MalformedFile, "model file has no stopping section");
    const auto& prob = section->problem;
    const auto& cfg = run.config;

    SolverOptions opts;
    opts.resolution = cfg.at("grid");
    opts.tol = cfg.at("tol");
    opts.max_iterations = cfg.at("max_iterations");
    auto grid = std::make_shared<const FaceGrid>(model, opts.resolution);
    const BellmanOperator op(model, prob, grid, make_time_mesh(model, prob, opts));
    const auto res = solve_value(op, opts);
    const double v_mu = value_general(model, mu, res.value);

    const std::vector<double> checks{0.1, 0.5, 1.0, 2.0, 5.0, op.mesh().horizon()};
    const auto var = verify_variational(op, res.value, checks, 5.0 * opts.tol);
    const double eps = cfg.at("contact_eps");
    const auto rule = stopping_rule(res.value, prob, eps);
    const auto mc = evaluate_policy_mc(model, mu, rule, prob, cfg.at("sims"), cfg.at("horizon"),
                                       RandomSource(cfg.at("seed").get<std::uint64_t>(), 0));

    json solution{{"V_of_mu", v_mu},
                  {"residual", res.residual},
                  {"iterations", res.iterations},
                  {"beta_witness", res.beta_witness},
                  {"grid_points", grid->size()},
                  {"mesh_step", res.mesh.step},
                  {"mesh_intervals", res.mesh.intervals},
                  {"variational",
                   {{"pass", var.pass},
                    {"obstacle_violation", var.obstacle_violation},
                    {"continuation_violation", var.continuation_violation},
                    {"checked_times", var.checked_times},
                    {"note", var.note}}},
                  {"policy_mc",
                   {{"mean", mc.mean},
                    {"stderr", mc.std_error},
                    {"truncation_bound", mc.truncation_bound},
                    {"samples", mc.samples},
                    {"within_3_stderr", std::abs(mc.mean - v_mu) <= 3.0 * mc.std_error + mc.truncation_bound + eps}}}};
    write_json(run, "solution.json", solution);

    auto os = open_output(run, "value.csv");
    os << "face_label";
    for (const auto& s : model.state_names()) os << ",w_" << s;
    os << ",value,obstacle,in_contact_set\n";
    for (std::size_t k = 0; k < grid->size(); ++k) {
        const auto& p = grid->point(k);
        os << model.observation().labels()[p.label];
        for (Eigen::Index i = 0; i < p.weights.size(); ++i) os << ',' << io::format_double(p.weights(i));
        os << ',' << io::format_double(res.value.values[k]) << ',' << io::format_double(prob.obstacle(p)) << ','
           << (rule.stops(p) ? 1 : 0) << '\n';
    }
    os.close();
    write_manifest(run);
    std::cout << "V(mu) = " << io::format_double(v_mu) << " after " << res.iterations << " iterations\n";
    return 0;
}

int cmd_stability(Run& run) {
    const auto model = io::model_from_json(run.model_doc);
    json section = run.model_doc.contains("stability") ? run.model_doc.at("stability") : json::object();
    const auto mu = section.contains("mu") ? initial_law(section, model, "mu") : initial_law(run.model_doc, model);
    const auto rho = initial_law(section, model, "rho");
    const double horizon = run.config.at("horizon");
    RandomSource rng(run.config.at("seed").get<std::uint64_t>(), 0);
    const auto obs = observe(sample_chain(model.generator(), mu, horizon, rng), model.observation());
    const auto times = time_grid(horizon, run.config.at("dt"));
    const auto dist = filter_distance_curve(model, obs, mu, rho, times);

    auto os = open_output(run, "stability.csv");
    os << "t,l1_distance\n";
    for (std::size_t k = 0; k < times.size(); ++k)
        os << io::format_double(times[k]) << ',' << io::format_double(dist[k]) << '\n';
    os.close();
    write_json(run, "summary.json",
               {{"min_distance", *std::min_element(dist.begin(), dist.end())},
                {"final_distance", dist.back()},
                {"observation_jumps", obs.jumps.size()}});
    write_manifest(run);
    return 0;
}

// ---- configuration ---------------------------------------------------------

/// Fills every parameter the command uses so the manifest alone determines
/// the run. Flags win over model-file sections, which win over defaults.
json resolve_config(const std::string& command, const Flags& f, const json& doc) {
    json c;
    c["seed"] = f.seed;
    auto pick = [&](const char* name, auto flag_value, auto fallback) {
        c[name] = f.has(name) ? json(flag_value) : json(fallback);
    };
    if (command == "simulate" || command == "filter") {
        pick("horizon", f.horizon, 10.0);
        pick("dt", f.dt, 0.1);
    } else if (command == "exit-time") {
        pick("horizon", f.horizon, 5.0);
        pick("dt", f.dt, 0.01);
        const json section = doc.contains("exit_time") ? doc.at("exit_time") : json::object();
        const auto model = io::model_from_json(doc);
        if (f.has("subset"))
            c["subset"] = f.subset;
        else if (section.contains("subset"))
            c["subset"] = section.at("subset");
        else {
            std::vector<std::string> face;
            for (auto i : model.face(model.label_of(0))) face.push_back(model.state_names()[i]);
            c["subset"] = face;
        }
        if (f.has("start"))
            c["start"] = f.start;
        else if (section.contains("start"))
            c["start"] = section.at("start");
        else
            c["start"] = model.state_names()[model.find_state(c["subset"][0].get<std::string>()).value_or(0)];
    } else if (command == "pdp-check") {
        pick("sims", f.sims, std::size_t{10000});
        pick("horizon", f.horizon, 5.0);
    } else if (command == "stop") {
        const auto model = io::model_from_json(doc);
        const auto section = io::stopping_from_json(doc, model);
        if (!section) throw Error(ErrorCode::MalformedFile, "model file has no stopping section");
        pick("grid", f.grid, section->grid_resolution);
        pick("tol", f.tol, section->tol);
        pick("sims", f.sims, std::size_t{2000});
        pick("horizon", f.horizon, std::log(1e6) / section->problem.discount);
        pick("max_iterations", f.max_iterations, std::size_t{10000});
        c["contact_eps"] = 10.0 * c["tol"].get<double>();
    } else if (command == "stability") {
        pick("horizon", f.horizon, 50.0);
        pick("dt", f.dt, 0.05);
    }
    return c;
}

int execute(Run& run, bool explicit_out) {
    if (run.command == "validate") return cmd_validate(run, explicit_out);
    if (run.command == "simulate") return cmd_simulate(run);
    if (run.command == "filter") return cmd_filter(run);
    if (run.command == "exit-time") return cmd_exit_time(run);
    if (run.command == "pdp-check") return cmd_pdp_check(run);
    if (run.command == "stop") return cmd_stop(run);
    if (run.command == "stability") return cmd_stability(run);
    throw Error(ErrorCode::InvalidArgument, "unknown command '" + run.command + "'");
}

void add_common(CLI::App* sub, Flags& f, bool needs_model = true) {
    auto* m = sub->add_option("--model", f.model, "model file (JSON)");
    if (needs_model) m->required()->check(CLI::ExistingFile);
    f.given[sub->get_name() + ":out"] = sub->add_option("--out", f.out, "output directory");
    sub->add_option("--seed", f.seed, "random seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Exact filtering, piecewise-deterministic dynamics and optimal stopping for observed Markov chains"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    Flags f;

    struct Command {
        const char* name;
        const char* help;
        std::vector<const char*> options;
    };
    const std::vector<Command> specs{
        {"validate", "check a model file", {}},
        {"simulate", "sample a chain, its observation and a directly simulated filter", {"horizon", "dt"}},
        {"filter", "simulate, observe and filter one path", {"horizon", "dt"}},
        {"exit-time", "exit-time survival: nonlinear formula against the sub-generator", {"horizon", "dt", "subset", "start"}},
        {"pdp-check", "Monte Carlo check of the first-jump laws", {"horizon", "sims"}},
        {"stop", "solve the optimal stopping problem in the model file", {"horizon", "sims", "grid", "tol", "max-iterations"}},
        {"stability", "distance between two filters driven by one observation path", {"horizon", "dt"}},
    };
    std::map<std::string, CLI::App*> subs;
    for (const auto& s : specs) {
        auto* sub = app.add_subcommand(s.name, s.help);
        add_common(sub, f);
        for (std::string o : s.options) {
            CLI::Option* opt = nullptr;
            if (o == "horizon") opt = sub->add_option("--horizon", f.horizon, "time horizon");
            if (o == "dt") opt = sub->add_option("--dt", f.dt, "output time step");
            if (o == "sims") opt = sub->add_option("--sims", f.sims, "number of simulations");
            if (o == "grid") opt = sub->add_option("--grid", f.grid, "grid resolution per face");
            if (o == "tol") opt = sub->add_option("--tol", f.tol, "value iteration tolerance");
            if (o == "max-iterations") {
                opt = sub->add_option("--max-iterations", f.max_iterations, "value iteration cap");
                o = "max_iterations";
            }
            if (o == "subset") opt = sub->add_option("--subset", f.subset, "state names of the set A")->delimiter(',');
            if (o == "start") opt = sub->add_option("--start", f.start, "start state in A");
            f.given[std::string(s.name) + ":" + o] = opt;
        }
        subs[s.name] = sub;
    }
    auto* replay = app.add_subcommand("replay", "rerun a command from its manifest");
    replay->add_option("--manifest", f.manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
    f.given["replay:out"] = replay->add_option("--out", f.out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        Run run;
        std::string active;
        for (const auto& [name, sub] : subs)
            if (sub->parsed()) active = name;
        if (replay->parsed()) active = "replay";

        // option lookups are keyed by the active subcommand
        Flags scoped = f;
        scoped.given.clear();
        for (const auto& [key, opt] : f.given)
            if (key.rfind(active + ":", 0) == 0) scoped.given[key.substr(active.size() + 1)] = opt;

        run.out = output_dir(f);
        const bool explicit_out = scoped.has("out") || (std::getenv(kOutEnv) && *std::getenv(kOutEnv));
        if (active == "replay") {
            const json m = io::read_json_file(f.manifest);
            run.command = m.at("command");
            run.model_file = m.at("model_file");
            run.model_doc = m.at("model");
            run.config = m.at("config");
        } else {
            run.command = active;
            run.model_file = f.model;
            run.model_doc = io::read_json_file(f.model);
            run.config = resolve_config(active, scoped, run.model_doc);
        }
        return execute(run, explicit_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code() == ErrorCode::NoConvergence ? 2 : 1;
    } catch (const json::exception& e) {
        std::cerr << "error [MalformedFile]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
