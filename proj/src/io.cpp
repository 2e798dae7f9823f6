#include "pcis/io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pcis {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

double number_at(const json& j, const char* what) {
    if (!j.is_number()) fail(std::string("expected a number for ") + what);
    return j.get<double>();
}

}  // namespace

json manifest_to_json(const RunManifest& m) {
    json j;
    j["command"] = m.command;
    j["tool_version"] = m.tool_version;
    j["seed"] = m.seed;
    // NaN means "not recorded": documents contracted to be byte-identical
    // across reruns cannot embed volatile timings.
    j["wall_clock_s"] = std::isfinite(m.wall_clock_s) ? json(m.wall_clock_s) : json(nullptr);
    j["inputs"] = m.input_digests;
    j["config"] = m.config_echo;
    return j;
}

std::string file_digest_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open file for digest: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    std::ostringstream out;
    out << std::hex;
    out.width(16);
    out.fill('0');
    out << h;
    return out.str();
}

json matrix_rows(const Eigen::MatrixXd& M) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_rows(const json& rows, const char* what) {
    if (!rows.is_array()) fail(std::string(what) + ": expected an array of rows");
    const Eigen::Index r = static_cast<Eigen::Index>(rows.size());
    Eigen::Index c = -1;
    Eigen::MatrixXd M;
    for (Eigen::Index i = 0; i < r; ++i) {
        const json& row = rows[static_cast<size_t>(i)];
        if (!row.is_array()) fail(std::string(what) + ": row is not an array");
        if (c < 0) {
            c = static_cast<Eigen::Index>(row.size());
            M.resize(r, c);
        }
        if (static_cast<Eigen::Index>(row.size()) != c)
            fail(std::string(what) + ": ragged rows");
        for (Eigen::Index j = 0; j < c; ++j)
            M(i, j) = number_at(row[static_cast<size_t>(j)], what);
    }
    if (c < 0) M.resize(0, 0);
    return M;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

Eigen::VectorXd vector_from_json(const json& arr, const char* what) {
    if (!arr.is_array()) fail(std::string(what) + ": expected an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i)
        v(i) = number_at(arr[static_cast<size_t>(i)], what);
    return v;
}

void write_json_file(const std::string& path, const json& doc) {
    std::ofstream out(path);
    if (!out) fail("cannot open output file: " + path);
    out << doc.dump(2) << "\n";
    if (!out) fail("failed writing: " + path);
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open input file: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        fail(path + ": JSON parse error: " + e.what());
    }
    return doc;
}

// ---- model.json ------------------------------------------------------------

namespace {

json flat_row_major(const Eigen::MatrixXd& M) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i)
        for (Eigen::Index j = 0; j < M.cols(); ++j) arr.push_back(M(i, j));
    return arr;
}

Eigen::MatrixXd from_flat_row_major(const json& arr, Eigen::Index rows, Eigen::Index cols,
                                    const char* what) {
    if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != rows * cols)
        fail(std::string(what) + ": expected " + std::to_string(rows * cols) + " entries");
    Eigen::MatrixXd M(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            M(i, j) = number_at(arr[static_cast<size_t>(k++)], what);
    return M;
}

}  // namespace

json model_to_json(const GpssmModel& model, const UncertaintyBounds& bounds) {
    json j;
    j["n"] = model.n();
    j["m"] = model.m();
    j["A"] = flat_row_major(model.A());
    j["B"] = flat_row_major(model.B());
    j["Q_diag"] = vector_to_json(model.q_diag());
    json kernels = json::array();
    for (const auto& k : model.kernels()) {
        json kj;
        kj["signal_variance"] = k.signal_variance;
        kj["lengthscales"] = vector_to_json(k.lengthscales);
        kernels.push_back(std::move(kj));
    }
    j["kernels"] = std::move(kernels);
    j["phi"] = bounds.phi;
    j["sigma_hat_diag"] = vector_to_json(bounds.sigma_hat_diag);
    json ds;
    ds["X"] = matrix_rows(model.data().X);
    ds["U"] = matrix_rows(model.data().U);
    ds["Xplus"] = matrix_rows(model.data().Xplus);
    j["dataset"] = std::move(ds);
    return j;
}

LoadedModel model_from_json(const json& doc, const std::string& base_dir) {
    for (const char* key : {"n", "m", "A", "B", "Q_diag", "kernels", "phi", "sigma_hat_diag"})
        if (!doc.contains(key)) fail(std::string("model.json: missing field ") + key);
    const Eigen::Index n = doc["n"].get<Eigen::Index>();
    const Eigen::Index m = doc["m"].get<Eigen::Index>();
    Eigen::MatrixXd A = from_flat_row_major(doc["A"], n, n, "model.json A");
    Eigen::MatrixXd B = from_flat_row_major(doc["B"], n, m, "model.json B");
    Eigen::VectorXd q = vector_from_json(doc["Q_diag"], "model.json Q_diag");

    std::vector<SquaredExpKernel> kernels;
    for (const auto& kj : doc["kernels"]) {
        SquaredExpKernel k;
        k.signal_variance = number_at(kj.at("signal_variance"), "kernel signal_variance");
        k.lengthscales = vector_from_json(kj.at("lengthscales"), "kernel lengthscales");
        kernels.push_back(std::move(k));
    }

    Dataset data;
    if (doc.contains("dataset")) {
        const json& ds = doc["dataset"];
        data.X = matrix_from_rows(ds.at("X"), "dataset X");
        data.U = matrix_from_rows(ds.at("U"), "dataset U");
        data.Xplus = matrix_from_rows(ds.at("Xplus"), "dataset Xplus");
        if (data.U.rows() == data.X.rows() && data.U.cols() == 0)
            data.U.resize(data.X.rows(), m);  // tolerate m = 0 round trips
    } else if (doc.contains("dataset_path")) {
        const std::string rel = doc["dataset_path"].get<std::string>();
        const std::string path =
            rel.empty() || rel.front() == '/' ? rel : base_dir + "/" + rel;
        data = read_transitions_csv(path);
    } else {
        fail("model.json: need dataset or dataset_path");
    }

    UncertaintyBounds bounds;
    bounds.phi = number_at(doc["phi"], "model.json phi");
    bounds.sigma_hat_diag = vector_from_json(doc["sigma_hat_diag"], "model.json sigma_hat_diag");
    bounds.q_diag = q;
    return LoadedModel{GpssmModel(std::move(A), std::move(B), std::move(kernels), q,
                                  std::move(data)),
                       std::move(bounds)};
}

// ---- constraints.json -------------------------------------------------------

json constraints_to_json(const PolytopeConstraints& constraints) {
    json j;
    json state = json::array();
    for (const auto& beta : constraints.state_rows) state.push_back({{"beta", vector_to_json(beta)}});
    json input = json::array();
    for (const auto& zeta : constraints.input_rows) input.push_back({{"zeta", vector_to_json(zeta)}});
    j["state"] = std::move(state);
    j["input"] = std::move(input);
    return j;
}

PolytopeConstraints constraints_from_json(const json& doc) {
    PolytopeConstraints c;
    if (doc.contains("state"))
        for (const auto& row : doc["state"])
            c.state_rows.push_back(vector_from_json(row.at("beta"), "constraints state beta"));
    if (doc.contains("input"))
        for (const auto& row : doc["input"])
            c.input_rows.push_back(vector_from_json(row.at("zeta"), "constraints input zeta"));
    if (doc.contains("box_state")) {
        const auto rows = box_rows(
            vector_from_json(doc["box_state"].at("lower"), "box_state lower"),
            vector_from_json(doc["box_state"].at("upper"), "box_state upper"));
        c.state_rows.insert(c.state_rows.end(), rows.begin(), rows.end());
    }
    if (doc.contains("box_input")) {
        const auto rows = box_rows(
            vector_from_json(doc["box_input"].at("lower"), "box_input lower"),
            vector_from_json(doc["box_input"].at("upper"), "box_input upper"));
        c.input_rows.insert(c.input_rows.end(), rows.begin(), rows.end());
    }
    for (const auto& v : c.state_rows)
        if (!v.allFinite()) fail("constraints.json: non-finite state row");
    for (const auto& v : c.input_rows)
        if (!v.allFinite()) fail("constraints.json: non-finite input row");
    return c;
}

// ---- pci.json ---------------------------------------------------------------

json pci_to_json(const PciResult& result) {
    json j;
    j["P"] = matrix_rows(result.P);
    j["L"] = matrix_rows(result.L);
    j["p_star"] = result.p_star;
    j["eta_star"] = result.eta_star;
    j["logdet"] = result.logdet;
    j["bisection_iterations"] = result.bisection_iterations;
    json log = json::array();
    for (const auto& e : result.log)
        log.push_back({{"p", e.p},
                       {"eta", e.eta},
                       {"status", to_string(e.status)},
                       {"solve_ms", e.solve_ms}});
    j["feasibility_log"] = std::move(log);
    j["warnings"] = result.warnings;
    return j;
}

PciResult pci_from_json(const json& doc) {
    PciResult r;
    r.P = matrix_from_rows(doc.at("P"), "pci.json P");
    r.L = matrix_from_rows(doc.at("L"), "pci.json L");
    r.p_star = number_at(doc.at("p_star"), "pci.json p_star");
    r.eta_star = number_at(doc.at("eta_star"), "pci.json eta_star");
    r.logdet = doc.value("logdet", 0.0);
    r.bisection_iterations = doc.value("bisection_iterations", 0);
    return r;
}

// ---- report.json -------------------------------------------------------------

namespace {

json interval_json(const WilsonInterval& ci) {
    return json{{"lower", ci.lower}, {"upper", ci.upper}};
}

}  // namespace

json report_to_json(const McReport& report) {
    json j;
    j["min_k_containment"] = report.min_k_containment;
    j["min_k_containment_ci"] = interval_json(report.min_k_containment_ci);
    j["input_admissibility"] = report.input_admissibility;
    j["input_admissibility_ci"] = interval_json(report.input_admissibility_ci);
    j["all_time_safety"] = report.all_time_safety;
    j["all_time_safety_ci"] = interval_json(report.all_time_safety_ci);
    j["all_time_containment"] = report.all_time_containment;
    j["all_time_containment_ci"] = interval_json(report.all_time_containment_ci);
    j["rollouts"] = report.rollouts;
    return j;
}

// ---- trajectory CSV -----------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    return fields;
}

int count_prefixed(const std::vector<std::string>& header, const std::string& prefix) {
    int count = 0;
    for (const auto& h : header) {
        if (h.size() > prefix.size() && h.compare(0, prefix.size(), prefix) == 0 &&
            h.find_first_not_of("0123456789", prefix.size()) == std::string::npos)
            ++count;
    }
    return count;
}

}  // namespace

Dataset read_transitions_csv(const std::string& path, bool trajectory_mode) {
    std::ifstream in(path);
    if (!in) fail("cannot open trajectory file: " + path);
    std::string line;
    if (!std::getline(in, line)) fail(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);

    const int n = count_prefixed(header, "x");
    const int m = count_prefixed(header, "u");
    if (n <= 0) fail(path + ": header must name state columns x1..xn");
    const size_t expected =
        trajectory_mode ? 1 + n + m : static_cast<size_t>(n + m + count_prefixed(header, "xp"));
    if (!trajectory_mode && count_prefixed(header, "xp") != n)
        fail(path + ": expected successor columns xp1..xp" + std::to_string(n));
    if (header.size() != expected) fail(path + ": unexpected column count in header");

    std::vector<Eigen::VectorXd> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != expected)
            fail(path + ":" + std::to_string(lineno) + ": wrong field count");
        Eigen::VectorXd row(static_cast<Eigen::Index>(expected));
        for (size_t i = 0; i < fields.size(); ++i) {
            try {
                row(static_cast<Eigen::Index>(i)) = std::stod(fields[i]);
            } catch (const std::exception&) {
                fail(path + ":" + std::to_string(lineno) + ": bad number '" + fields[i] + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail(path + ": no data rows");

    Dataset data;
    if (!trajectory_mode) {
        const Eigen::Index N = static_cast<Eigen::Index>(rows.size());
        data.X.resize(N, n);
        data.U.resize(N, m);
        data.Xplus.resize(N, n);
        for (Eigen::Index j = 0; j < N; ++j) {
            data.X.row(j) = rows[j].segment(0, n);
            data.U.row(j) = rows[j].segment(n, m);
            data.Xplus.row(j) = rows[j].segment(n + m, n);
        }
    } else {
        // Consecutive samples with k incrementing by one form transitions.
        std::vector<Eigen::Index> from;
        for (size_t j = 0; j + 1 < rows.size(); ++j)
            if (rows[j + 1](0) == rows[j](0) + 1.0) from.push_back(static_cast<Eigen::Index>(j));
        if (from.empty()) fail(path + ": no consecutive samples in trajectory mode");
        const Eigen::Index N = static_cast<Eigen::Index>(from.size());
        data.X.resize(N, n);
        data.U.resize(N, m);
        data.Xplus.resize(N, n);
        for (Eigen::Index j = 0; j < N; ++j) {
            data.X.row(j) = rows[from[j]].segment(1, n);
            data.U.row(j) = rows[from[j]].segment(1 + n, m);
            data.Xplus.row(j) = rows[from[j] + 1].segment(1, n);
        }
    }
    data.validate();
    return data;
}

void write_transitions_csv(const std::string& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) fail("cannot open output file: " + path);
    out.precision(17);
    for (Eigen::Index j = 0; j < data.X.cols(); ++j) out << (j ? "," : "") << "x" << (j + 1);
    for (Eigen::Index j = 0; j < data.U.cols(); ++j) out << ",u" << (j + 1);
    for (Eigen::Index j = 0; j < data.X.cols(); ++j) out << ",xp" << (j + 1);
    out << "\n";
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        for (Eigen::Index j = 0; j < data.X.cols(); ++j)
            out << (j ? "," : "") << data.X(i, j);
        for (Eigen::Index j = 0; j < data.U.cols(); ++j) out << "," << data.U(i, j);
        for (Eigen::Index j = 0; j < data.Xplus.cols(); ++j) out << "," << data.Xplus(i, j);
        out << "\n";
    }
    if (!out) fail("failed writing: " + path);
}

}  // namespace pcis
