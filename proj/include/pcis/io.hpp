#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>

#include "pcis/gpssm.hpp"
#include "pcis/invariance.hpp"
#include "pcis/simulator.hpp"
#include "pcis/synthesis.hpp"

// File formats: model.json, constraints.json, pci.json, report.json and the
// trajectory CSV, plus the run manifest embedded in every output document.

namespace pcis {

using nlohmann::json;

inline constexpr const char* kToolVersion = "pcis 0.1.0";

struct RunManifest {
    std::string command;
    std::string tool_version = kToolVersion;
    std::uint64_t seed = 0;
    double wall_clock_s = 0.0;
    std::map<std::string, std::string> input_digests;  // path -> hex digest
    json config_echo = json::object();
};

json manifest_to_json(const RunManifest& manifest);

// FNV-1a 64 digest of a file's bytes, as a 16-character hex string.
std::string file_digest_hex(const std::string& path);

// ---- model.json ----------------------------------------------------------

json model_to_json(const GpssmModel& model, const UncertaintyBounds& bounds);

struct LoadedModel {
    GpssmModel model;
    UncertaintyBounds bounds;
};

// `base_dir` resolves a relative dataset_path reference.
LoadedModel model_from_json(const json& doc, const std::string& base_dir = ".");

// ---- constraints.json ----------------------------------------------------

json constraints_to_json(const PolytopeConstraints& constraints);
PolytopeConstraints constraints_from_json(const json& doc);

// ---- pci.json -------------------------------------------------------------

json pci_to_json(const PciResult& result);
PciResult pci_from_json(const json& doc);

// ---- report.json ----------------------------------------------------------

json report_to_json(const McReport& report);

// ---- trajectory CSV --------------------------------------------------------

// Transition schema: header x1..xn,u1..um,xp1..xpn, one transition per line.
// Trajectory schema: header k,x1..xn,u1..um; consecutive rows with k
// incrementing by one form transitions.
Dataset read_transitions_csv(const std::string& path, bool trajectory_mode = false);
void write_transitions_csv(const std::string& path, const Dataset& data);

// ---- helpers ---------------------------------------------------------------

json matrix_rows(const Eigen::MatrixXd& M);
Eigen::MatrixXd matrix_from_rows(const json& rows, const char* what);
json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& arr, const char* what);

void write_json_file(const std::string& path, const json& doc);
json read_json_file(const std::string& path);

}  // namespace pcis
