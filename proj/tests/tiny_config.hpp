#pragma once

namespace testing {

/// Small sizes so a whole pipeline finishes in seconds.
inline constexpr const char* kTinyConfig = R"({
  "threads": 1,
  "data": {"steady_points": 40, "transient_points": 200},
  "fnn": {"hp": {"epochs": 4, "batch_size": 32}},
  "tuning": {"momenta": [0.9], "learning_rates": [1e-3, 3e-3], "epochs_per_cell": 2},
  "ident": {"cycles": ["urban"], "passes": 1},
  "rnn": {"hp": {"epochs": 2}},
  "scenarios": {
    "cycles": ["case_study"],
    "soot_reference_cycles": ["case_study"],
    "tags": ["baseline", "A"],
    "presets": {"base": {"horizon": 3, "max_iter": 5, "time_budget": 0}}
  }
})";

}  // namespace testing
