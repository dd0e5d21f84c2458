#pragma once

// Hand-built toy panels (n <= 5, T <= 3) shared by unit and acceptance
// tests, in oracle form and as CSV text for the library loader.

#include <cstdio>
#include <string>
#include <vector>

#include "oracle.hpp"

namespace toy {

using oracle::Row;

inline std::vector<oracle::Problem> panels() {
    std::vector<oracle::Problem> out;

    // 4 x 3, f = (1), no unavailable records.
    out.push_back({{{1, 1, 1, 1, 0.5, 1, 2.3, -0.4},
                    {1, 2, 1, 0, 0.5, 0, 0.0, 0.9},
                    {1, 3, 1, 1, 0.5, 1, 1.7, 1.3},
                    {2, 1, 1, 0, 0.5, 1, 0.2, -1.1},
                    {2, 2, 1, 1, 0.5, 1, 2.9, 0.2},
                    {2, 3, 1, 0, 0.5, 1, -0.6, 0.7},
                    {3, 1, 1, 1, 0.5, 0, 0.0, 1.8},
                    {3, 2, 1, 0, 0.5, 1, 0.4, -0.3},
                    {3, 3, 1, 1, 0.5, 1, 3.1, 0.5},
                    {4, 1, 1, 0, 0.5, 1, 1.0, -1.6},
                    {4, 2, 1, 1, 0.5, 1, 1.2, 0.1},
                    {4, 3, 1, 0, 0.5, 0, 0.0, 1.1}},
                   false,
                   0.5});

    // 5 x 3, f = (1, z), varying randomization probabilities.
    out.push_back({{{1, 1, 1, 1, 0.3, 1, 1.9, -1.2},
                    {1, 2, 1, 0, 0.6, 1, 0.1, 0.4},
                    {1, 3, 1, 0, 0.4, 0, 0.0, 1.5},
                    {2, 1, 1, 1, 0.5, 1, 3.3, 1.7},
                    {2, 2, 1, 1, 0.7, 1, 2.2, 0.3},
                    {2, 3, 1, 0, 0.2, 1, -0.4, -0.8},
                    {3, 1, 1, 0, 0.4, 1, 0.6, 0.9},
                    {3, 2, 1, 1, 0.4, 0, 0.0, -1.9},
                    {3, 3, 1, 1, 0.6, 1, 0.8, -0.6},
                    {4, 1, 1, 0, 0.5, 1, -0.2, -0.1},
                    {4, 2, 1, 1, 0.3, 1, 2.6, 1.1},
                    {4, 3, 1, 0, 0.5, 1, 0.9, 0.6},
                    {5, 1, 1, 1, 0.6, 1, 1.4, 0.0},
                    {5, 2, 1, 0, 0.4, 0, 0.0, -1.4},
                    {5, 3, 1, 1, 0.5, 1, 2.0, 1.9}},
                   true,
                   0.45});

    // 5 x 2, f = (1, z), some unavailable records.
    out.push_back({{{1, 1, 1, 1, 0.4, 1, 2.1, 0.8},
                    {1, 2, 0, 0, 0.0, 0, 0.0, -0.5},
                    {2, 1, 1, 0, 0.4, 1, -0.3, -1.0},
                    {2, 2, 1, 1, 0.4, 1, 1.1, -0.2},
                    {3, 1, 1, 1, 0.4, 0, 0.0, 1.4},
                    {3, 2, 1, 0, 0.4, 1, 0.7, 0.6},
                    {4, 1, 0, 0, 0.0, 1, 0.5, 0.3},
                    {4, 2, 1, 0, 0.4, 1, 0.2, 1.8},
                    {5, 1, 1, 1, 0.4, 1, 3.0, -1.5},
                    {5, 2, 1, 1, 0.4, 1, 0.4, -0.7}},
                   true,
                   0.4});

    // 3 x 3, f = (1), heavy missingness.
    out.push_back({{{1, 1, 1, 1, 0.6, 1, 1.5, 0.2},
                    {1, 2, 1, 0, 0.6, 0, 0.0, -0.9},
                    {1, 3, 1, 1, 0.6, 0, 0.0, 1.2},
                    {2, 1, 1, 0, 0.6, 1, 0.3, 0.5},
                    {2, 2, 1, 1, 0.6, 1, 2.4, -1.3},
                    {2, 3, 1, 0, 0.6, 1, -0.8, 0.8},
                    {3, 1, 1, 1, 0.6, 0, 0.0, -0.4},
                    {3, 2, 1, 0, 0.6, 1, 1.2, 1.6},
                    {3, 3, 1, 1, 0.6, 1, 0.9, -1.7}},
                   false,
                   0.6});

    // 4 x 3, f = (1, z), p~ differs from p.
    out.push_back({{{1, 1, 1, 0, 0.35, 1, 0.8, 1.0},
                    {1, 2, 1, 1, 0.35, 1, 2.7, -0.6},
                    {1, 3, 0, 0, 0.0, 1, 0.1, 0.3},
                    {2, 1, 1, 1, 0.35, 1, 1.6, -1.4},
                    {2, 2, 1, 0, 0.35, 0, 0.0, 0.9},
                    {2, 3, 1, 1, 0.35, 1, 3.4, 1.5},
                    {3, 1, 1, 0, 0.35, 1, -1.1, -0.2},
                    {3, 2, 1, 1, 0.35, 0, 0.0, 0.4},
                    {3, 3, 1, 0, 0.35, 1, 0.0, -0.9},
                    {4, 1, 1, 1, 0.35, 1, 0.9, 0.7},
                    {4, 2, 1, 0, 0.35, 1, 0.6, -1.8},
                    {4, 3, 1, 1, 0.35, 1, 2.2, 0.1}},
                   true,
                   0.5});
    return out;
}

inline std::string to_csv(const oracle::Problem& pb) {
    std::string s = "id,t,avail,treat,prob_treat,obs_flag,outcome,z\n";
    char buf[256];
    for (const Row& r : pb.rows) {
        std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%.17g,%d,", r.id, r.t, r.avail, r.treat, r.prob, r.obs);
        s += buf;
        if (r.obs == 1) {
            std::snprintf(buf, sizeof buf, "%.17g", r.y);
            s += buf;
        }
        std::snprintf(buf, sizeof buf, ",%.17g\n", r.z);
        s += buf;
    }
    return s;
}

}  // namespace toy
