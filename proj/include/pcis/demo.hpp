#pragma once

#include <cstdint>

#include "pcis/gpssm.hpp"
#include "pcis/invariance.hpp"
#include "pcis/simulator.hpp"
#include "pcis/synthesis.hpp"

// End-to-end pipeline on a synthetic planar quadrotor: excite the ground
// truth to collect a trajectory, fit the GPSSM, synthesize the PCI set and
// gain, verify, and validate by Monte Carlo.

namespace pcis {

struct DemoConfig {
    int transitions = 500;
    int restarts = 2;
    std::uint64_t seed = 0;
    int rollouts = 10000;
    int horizon = 100;
    int jobs = 1;
    QuadrotorParams truth;
    Eigen::VectorXd q_true;  // process noise used to generate data and to roll out
    SynthesisConfig synthesis;

    DemoConfig();
};

// Box constraints of the quadrotor case study: positions within +-5 m,
// velocities within +-7 m/s, accelerations within +-5 m/s^2.
PolytopeConstraints quadrotor_constraints();

// Excites the ground truth with a dithered stabilizing feedback and returns
// the collected transitions.
Dataset generate_quadrotor_data(const DemoConfig& config);

struct DemoResult {
    Dataset data;
    GpssmModel model;
    UncertaintyBounds bounds;
    PolytopeConstraints constraints;
    PciResult pci;
    VerificationReport verification;
    McReport report;
};

DemoResult run_quadrotor_demo(const DemoConfig& config);

}  // namespace pcis
