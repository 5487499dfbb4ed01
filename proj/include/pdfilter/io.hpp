#pragma once

#include "pdfilter/filter.hpp"
#include "pdfilter/stopping.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <charconv>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace pdfilter::io {

using nlohmann::json;

/// Shortest decimal string that parses back to the same double.
inline std::string format_double(double x) {
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    return std::string(buf.data(), res.ptr);
}

inline std::string label_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number()) return format_double(v.get<double>());
    throw Error(ErrorCode::MalformedFile, "observation labels must be strings or numbers");
}

/// Parses a model document:
///   {"states": [...], "generator": [[...]], "observation": {state: label},
///    "labels": [...] (optional order of O)}
/// Labels default to order of first appearance along `states`.
inline Model model_from_json(const json& doc) {
    try {
        const auto states = doc.at("states").get<std::vector<std::string>>();
        const auto rows = doc.at("generator").get<std::vector<std::vector<double>>>();
        const auto n = states.size();
        if (rows.size() != n) throw Error(ErrorCode::NotSquare, "generator row count differs from state count");
        Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            if (rows[i].size() != n) throw Error(ErrorCode::NotSquare, "generator row " + std::to_string(i + 1) + " has wrong length");
            for (std::size_t j = 0; j < n; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
        RateMatrix generator = validate_generator(m);

        const auto& obs = doc.at("observation");
        if (!obs.is_object()) throw Error(ErrorCode::MalformedFile, "observation must map state names to labels");
        std::vector<std::string> labels;
        if (doc.contains("labels"))
            for (const auto& l : doc.at("labels")) labels.push_back(label_text(l));
        std::vector<LabelIndex> assignment(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (!obs.contains(states[i]))
                throw Error(ErrorCode::InvalidObservation, "state '" + states[i] + "' has no observation label");
            const auto text = label_text(obs.at(states[i]));
            auto it = std::find(labels.begin(), labels.end(), text);
            if (it == labels.end()) {
                if (doc.contains("labels")) throw Error(ErrorCode::InvalidObservation, "label '" + text + "' not declared");
                labels.push_back(text);
                it = std::prev(labels.end());
            }
            assignment[i] = static_cast<LabelIndex>(it - labels.begin());
        }
        for (const auto& [key, _] : obs.items())
            if (std::find(states.begin(), states.end(), key) == states.end())
                throw Error(ErrorCode::InvalidObservation, "observation refers to unknown state '" + key + "'");
        return Model(std::move(generator), ObservationModel(std::move(labels), std::move(assignment)), states);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedFile, e.what());
    }
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MalformedFile, "cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedFile, path + ": " + e.what());
    }
}

inline RowVector row_from_json(const json& v, std::size_t n, const std::string& what) {
    try {
        const auto xs = v.get<std::vector<double>>();
        if (xs.size() != n) throw Error(ErrorCode::MalformedFile, what + " must have " + std::to_string(n) + " entries");
        RowVector r(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) r(static_cast<Eigen::Index>(i)) = xs[i];
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedFile, what + ": " + e.what());
    }
}

inline json to_json(const RowVector& r) {
    json out = json::array();
    for (Eigen::Index i = 0; i < r.size(); ++i) out.push_back(r(i));
    return out;
}

inline json to_json(const Vector& v) { return to_json(RowVector(v.transpose())); }

/// Optional "stopping" section: {g, l, alpha, grid_resolution, tol}.
struct StoppingSection {
    StoppingProblem problem;
    std::size_t grid_resolution = 16;
    double tol = 1e-6;
};

inline std::optional<StoppingSection> stopping_from_json(const json& doc, const Model& model) {
    if (!doc.contains("stopping")) return std::nullopt;
    const auto& s = doc.at("stopping");
    StoppingSection out;
    const auto n = model.num_states();
    out.problem.stopping_cost = row_from_json(s.at("g"), n, "stopping.g").transpose();
    out.problem.running_cost = row_from_json(s.at("l"), n, "stopping.l").transpose();
    out.problem.discount = s.at("alpha").get<double>();
    if (s.contains("grid_resolution")) out.grid_resolution = s.at("grid_resolution").get<std::size_t>();
    if (s.contains("tol")) out.tol = s.at("tol").get<double>();
    out.problem.validate(model);
    return out;
}

inline void write_path_csv(std::ostream& os, const PiecewisePath& path, const std::vector<std::string>& names) {
    os << "time,value\n";
    os << format_double(0.0) << ',' << names.at(path.initial_value) << '\n';
    for (const auto& j : path.jumps) os << format_double(j.time) << ',' << names.at(j.value) << '\n';
}

/// Trajectory rows on a time mesh with step dt plus a pre-jump and a
/// post-jump row at every jump time.
inline void write_trajectory_csv(std::ostream& os, const Model& model, const Trajectory& traj, double dt) {
    os << "time";
    for (const auto& s : model.state_names()) os << ",pi_" << s;
    os << ",label\n";
    auto row = [&](double t, const FacePoint& p) {
        os << format_double(t);
        for (Eigen::Index i = 0; i < p.weights.size(); ++i) os << ',' << format_double(p.weights(i));
        os << ',' << model.observation().labels().at(p.label) << '\n';
    };
    std::size_t next_jump = 0;
    const auto steps = static_cast<std::size_t>(std::floor(traj.horizon / dt + 1e-9));
    for (std::size_t k = 0; k <= steps; ++k) {
        const double t = std::min(traj.horizon, dt * static_cast<double>(k));
        bool covered = false;  // a post-jump row at exactly t stands in for the mesh row
        while (next_jump < traj.jumps.size() && traj.jumps[next_jump].time <= t) {
            const auto& j = traj.jumps[next_jump++];
            row(j.time, j.pre);
            row(j.time, j.post);
            covered = j.time == t;
        }
        if (!covered) row(t, traj.at(model, t));
    }
    while (next_jump < traj.jumps.size()) {
        const auto& j = traj.jumps[next_jump++];
        row(j.time, j.pre);
        row(j.time, j.post);
    }
}

}  // namespace pdfilter::io
