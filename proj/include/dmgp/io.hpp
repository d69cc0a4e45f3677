#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <span>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "inference.hpp"
#include "prediction.hpp"

namespace dmgp {

/// Malformed input file; the message carries the 1-based line number when known.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    for (auto& c : out) {
        const auto b = c.find_first_not_of(" \t\r");
        const auto e = c.find_last_not_of(" \t\r");
        c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
    }
    return out;
}

inline std::string at_line(std::size_t line, const std::string& what)
{
    return "line " + std::to_string(line) + ": " + what;
}

inline double parse_double(const std::string& s, std::size_t line)
{
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end || s.empty())
        throw ParseError(at_line(line, "expected a number, got '" + s + "'"));
    if (!std::isfinite(v))
        throw ParseError(at_line(line, "non-finite value '" + s + "'"));
    return v;
}

inline int parse_int(const std::string& s, std::size_t line)
{
    int v = 0;
    const auto* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end || s.empty())
        throw ParseError(at_line(line, "expected an integer, got '" + s + "'"));
    return v;
}

/// Reads non-empty lines, skipping a header whose first cell matches `first_column`.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> read_rows(std::istream& in,
                                                                             const std::string& first_column,
                                                                             std::size_t& header_cols)
{
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    std::string line;
    std::size_t no = 0;
    header_cols = 0;
    while (std::getline(in, line)) {
        ++no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        auto cells = split_csv(line);
        if (rows.empty() && header_cols == 0 && !cells.empty() && cells[0] == first_column) {
            header_cols = cells.size();
            continue;
        }
        rows.emplace_back(no, std::move(cells));
    }
    return rows;
}

inline std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot open '" + path.string() + "' for writing");
    out << std::setprecision(17);
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path.string() + "' for reading");
    return in;
}

template <class F>
auto with_path(const std::filesystem::path& path, F&& f)
{
    try {
        return f();
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

} // namespace detail

/// Dataset CSV: header output_id,t,x1..xd,y; one row per observation.
inline void write_dataset(std::ostream& out, const Dataset& data)
{
    out << std::setprecision(17) << "output_id,t";
    for (Eigen::Index k = 0; k < data.dim(); ++k)
        out << ",x" << (k + 1);
    out << ",y\n";
    auto emit = [&](const OutputSeries& s) {
        for (Eigen::Index r = 0; r < s.size(); ++r) {
            out << s.id << ',' << s.times[static_cast<std::size_t>(r)];
            for (Eigen::Index k = 0; k < s.dim(); ++k)
                out << ',' << s.inputs(r, k);
            out << ',' << s.observations(r) << '\n';
        }
    };
    for (const auto& s : data.sources)
        emit(s);
    emit(data.target);
}

/// Parses a dataset CSV. Outputs are ordered by id; the target is `target_id` when given,
/// otherwise the largest id. Rows of one output may appear in any stamp order.
inline Dataset read_dataset(std::istream& in, std::optional<int> target_id = std::nullopt)
{
    std::size_t header = 0;
    const auto rows = detail::read_rows(in, "output_id", header);
    if (rows.empty())
        throw ParseError("dataset has no observations");
    const std::size_t width = header ? header : rows.front().second.size();
    if (width < 4)
        throw ParseError(detail::at_line(rows.front().first, "need columns output_id,t,x1..xd,y"));
    const auto d = static_cast<Eigen::Index>(width - 3);

    struct Obs {
        Stamp t;
        Eigen::VectorXd x;
        double y;
        std::size_t line;
    };
    std::map<int, std::vector<Obs>> by_id;
    for (const auto& [no, cells] : rows) {
        if (cells.size() != width)
            throw ParseError(detail::at_line(no, "expected " + std::to_string(width) + " columns, got "
                                                     + std::to_string(cells.size())));
        Obs o;
        const int id = detail::parse_int(cells[0], no);
        o.t = detail::parse_int(cells[1], no);
        o.x.resize(d);
        for (Eigen::Index k = 0; k < d; ++k)
            o.x(k) = detail::parse_double(cells[static_cast<std::size_t>(2 + k)], no);
        o.y = detail::parse_double(cells.back(), no);
        o.line = no;
        by_id[id].push_back(std::move(o));
    }
    const int tid = target_id.value_or(by_id.rbegin()->first);
    if (!by_id.contains(tid))
        throw ParseError("target output " + std::to_string(tid) + " has no rows");

    auto build = [&](int id, std::vector<Obs>& obs) {
        std::sort(obs.begin(), obs.end(), [](const Obs& a, const Obs& b) { return a.t < b.t; });
        OutputSeries s;
        s.id = id;
        s.inputs.resize(static_cast<Eigen::Index>(obs.size()), d);
        s.observations.resize(static_cast<Eigen::Index>(obs.size()));
        for (std::size_t r = 0; r < obs.size(); ++r) {
            if (r > 0 && obs[r].t == obs[r - 1].t)
                throw ParseError(detail::at_line(obs[r].line, "duplicate stamp " + std::to_string(obs[r].t)
                                                                  + " for output " + std::to_string(id)));
            s.times.push_back(obs[r].t);
            s.inputs.row(static_cast<Eigen::Index>(r)) = obs[r].x.transpose();
            s.observations(static_cast<Eigen::Index>(r)) = obs[r].y;
        }
        return s;
    };
    Dataset data;
    for (auto& [id, obs] : by_id) {
        if (id == tid)
            data.target = build(id, obs);
        else
            data.sources.push_back(build(id, obs));
    }
    data.validate();
    return data;
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& data)
{
    auto out = detail::open_out(path);
    write_dataset(out, data);
}

inline Dataset read_dataset(const std::filesystem::path& path, std::optional<int> target_id = std::nullopt)
{
    auto in = detail::open_in(path);
    return detail::with_path(path, [&] { return read_dataset(in, target_id); });
}

/// Query or held-out target points: header t,x1..xd[,y].
struct QueryPoints {
    std::vector<Stamp> times;
    Eigen::MatrixXd inputs;
    std::optional<Eigen::VectorXd> truth;
};

inline void write_queries(std::ostream& out, const QueryPoints& q)
{
    out << std::setprecision(17) << 't';
    for (Eigen::Index k = 0; k < q.inputs.cols(); ++k)
        out << ",x" << (k + 1);
    out << (q.truth ? ",y\n" : "\n");
    for (std::size_t r = 0; r < q.times.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(r);
        out << q.times[r];
        for (Eigen::Index k = 0; k < q.inputs.cols(); ++k)
            out << ',' << q.inputs(i, k);
        if (q.truth)
            out << ',' << (*q.truth)(i);
        out << '\n';
    }
}

/// Parses query points. Without a header every column after t is an input; with a
/// header, a trailing y column is read as truth.
inline QueryPoints read_queries(std::istream& in)
{
    std::size_t header = 0;
    std::streampos start = in.tellg();
    std::string first;
    std::getline(in, first);
    const auto head = detail::split_csv(first);
    const bool has_y = !head.empty() && head[0] == "t" && head.back() == "y";
    in.clear();
    in.seekg(start);
    const auto rows = detail::read_rows(in, "t", header);
    QueryPoints q;
    if (rows.empty())
        return q;
    const std::size_t width = header ? header : rows.front().second.size();
    const std::size_t nx = width - 1 - (has_y ? 1 : 0);
    if (width < 2 || nx < 1)
        throw ParseError(detail::at_line(rows.front().first, "need columns t,x1..xd"));
    q.inputs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(nx));
    if (has_y)
        q.truth = Eigen::VectorXd(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& [no, cells] = rows[r];
        if (cells.size() != width)
            throw ParseError(detail::at_line(no, "expected " + std::to_string(width) + " columns, got "
                                                     + std::to_string(cells.size())));
        q.times.push_back(detail::parse_int(cells[0], no));
        for (std::size_t k = 0; k < nx; ++k)
            q.inputs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = detail::parse_double(cells[1 + k], no);
        if (has_y)
            (*q.truth)(static_cast<Eigen::Index>(r)) = detail::parse_double(cells.back(), no);
    }
    return q;
}

inline void write_queries(const std::filesystem::path& path, const QueryPoints& q)
{
    auto out = detail::open_out(path);
    write_queries(out, q);
}

inline QueryPoints read_queries(const std::filesystem::path& path)
{
    auto in = detail::open_in(path);
    return detail::with_path(path, [&] { return read_queries(in); });
}

/// Predictions CSV: header t,mean,variance.
inline void write_predictions(std::ostream& out, std::span<const Stamp> stamps, const std::vector<Prediction>& p)
{
    if (stamps.size() != p.size())
        throw ContractError("one prediction is needed per stamp");
    out << std::setprecision(17) << "t,mean,variance\n";
    for (std::size_t q = 0; q < p.size(); ++q)
        out << stamps[q] << ',' << p[q].mean << ',' << p[q].variance << '\n';
}

inline void write_predictions(const std::filesystem::path& path, std::span<const Stamp> stamps,
                              const std::vector<Prediction>& p)
{
    auto out = detail::open_out(path);
    write_predictions(out, stamps, p);
}

/// Gamma CSV in tidy form: output,t,gamma with t the later stamp of each consecutive pair.
inline void write_gamma(std::ostream& out, const GammaPosterior& g, const Dataset& data)
{
    out << std::setprecision(17) << "output,t,gamma\n";
    for (Eigen::Index i = 0; i < g.values.rows(); ++i) {
        const int id = i < data.num_sources() ? data.sources[static_cast<std::size_t>(i)].id : data.target.id;
        for (Eigen::Index c = 0; c < g.values.cols(); ++c)
            out << id << ',' << data.target.times[static_cast<std::size_t>(c + 1)] << ',' << g.values(i, c) << '\n';
    }
}

inline void write_gamma(const std::filesystem::path& path, const GammaPosterior& g, const Dataset& data)
{
    auto out = detail::open_out(path);
    write_gamma(out, g, data);
}

/// Fitted-model archive: JSON with a format tag and version. Parameters are stored
/// unconstrained, per series, together with the prior configuration and E[gamma].
inline constexpr const char* archive_format = "dmgp-fit";
inline constexpr int archive_version = 1;

namespace detail {

inline nlohmann::json to_json(const Eigen::MatrixXd& m)
{
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j)
{
    if (!j.is_array())
        throw ParseError("archive: expected a matrix");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (!j[r].is_array() || static_cast<Eigen::Index>(j[r].size()) != cols)
            throw ParseError("archive: ragged matrix");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = j[r][c].get<double>();
    }
    return m;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j)
{
    return Eigen::VectorXd::Map(j.get<std::vector<double>>().data(), static_cast<Eigen::Index>(j.size()));
}

} // namespace detail

inline nlohmann::json spike_slab_to_json(const SpikeSlabConfig& ss)
{
    nlohmann::json j{{"nu0", ss.nu0}, {"eta", ss.eta}, {"slab", ss.is_soft() ? "soft" : "hard"}, {"nu1", ss.nu1()}};
    if (ss.is_soft())
        j["rho"] = ss.rho();
    return j;
}

inline SpikeSlabConfig spike_slab_from_json(const nlohmann::json& j)
{
    for (const auto& [k, v] : j.items())
        if (k != "nu0" && k != "eta" && k != "slab" && k != "nu1" && k != "rho")
            throw ParseError("unknown spike_slab key '" + k + "'");
    SpikeSlabConfig ss;
    ss.nu0 = j.value("nu0", ss.nu0);
    ss.eta = j.value("eta", ss.eta);
    const std::string kind = j.value("slab", std::string("hard"));
    const double nu1 = j.value("nu1", 0.1);
    if (kind == "soft")
        ss.slab = SoftSlab{nu1, j.value("rho", 0.9)};
    else if (kind == "hard") {
        if (j.contains("rho"))
            throw ParseError("rho applies to the soft slab only");
        ss.slab = HardSlab{nu1};
    } else
        throw ParseError("slab must be 'hard' or 'soft', got '" + kind + "'");
    ss.validate();
    return ss;
}

inline nlohmann::json fit_to_json(const FitResult& fit, const SpikeSlabConfig& ss)
{
    const auto& p = fit.params;
    nlohmann::json j;
    j["format"] = archive_format;
    j["version"] = archive_version;
    j["spike_slab"] = spike_slab_to_json(ss);
    j["parameterization"] = "softplus";
    nlohmann::json src = nlohmann::json::array();
    for (std::size_t i = 0; i < p.source_amp.size(); ++i)
        src.push_back({{"amp", std::vector<double>(p.source_amp[i].data(), p.source_amp[i].data() + p.source_amp[i].size())},
                       {"ls", detail::to_json(p.source_ls[i])},
                       {"noise", p.source_noise(static_cast<Eigen::Index>(i))}});
    j["sources"] = src;
    nlohmann::json tgt = nlohmann::json::array();
    for (std::size_t k = 0; k < p.target_amp.size(); ++k)
        tgt.push_back({{"amp", std::vector<double>(p.target_amp[k].data(), p.target_amp[k].data() + p.target_amp[k].size())},
                       {"ls", detail::to_json(p.target_ls[k])}});
    j["target"] = {{"kernels", tgt}, {"noise", p.target_noise}};
    j["gamma"] = detail::to_json(fit.gamma.values);
    j["wallclock_seconds"] = fit.wallclock;
    return j;
}

/// Restores a fit archive; shapes are checked against `data` (the training dataset).
inline FitResult fit_from_json(const nlohmann::json& j, const Dataset& data, SpikeSlabConfig* ss = nullptr)
{
    try {
        if (j.value("format", std::string()) != archive_format)
            throw ParseError("not a fit archive (missing format tag)");
        const int v = j.at("version").get<int>();
        if (v != archive_version)
            throw ParseError("unsupported archive version " + std::to_string(v));
        FitResult f;
        auto& p = f.params;
        for (const auto& s : j.at("sources")) {
            p.source_amp.push_back(detail::vector_from_json(s.at("amp")));
            p.source_ls.push_back(detail::matrix_from_json(s.at("ls")));
        }
        p.source_noise.resize(static_cast<Eigen::Index>(j.at("sources").size()));
        for (std::size_t i = 0; i < j.at("sources").size(); ++i)
            p.source_noise(static_cast<Eigen::Index>(i)) = j.at("sources")[i].at("noise").get<double>();
        for (const auto& k : j.at("target").at("kernels")) {
            p.target_amp.push_back(detail::vector_from_json(k.at("amp")));
            p.target_ls.push_back(detail::matrix_from_json(k.at("ls")));
        }
        p.target_noise = j.at("target").at("noise").get<double>();
        f.gamma.values = detail::matrix_from_json(j.at("gamma"));
        f.wallclock = j.value("wallclock_seconds", 0.0);
        p.check_shapes(data);
        const SpikeSlabConfig prior = spike_slab_from_json(j.at("spike_slab"));
        if (ss)
            *ss = prior;
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("archive: ") + e.what());
    }
}

inline void write_fit(const std::filesystem::path& path, const FitResult& fit, const SpikeSlabConfig& ss)
{
    auto out = detail::open_out(path);
    out << fit_to_json(fit, ss).dump(1) << '\n';
}

inline FitResult read_fit(const std::filesystem::path& path, const Dataset& data, SpikeSlabConfig* ss = nullptr)
{
    auto in = detail::open_in(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return detail::with_path(path, [&] { return fit_from_json(j, data, ss); });
}

} // namespace dmgp
