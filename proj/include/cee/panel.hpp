#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cee {

// One row of a long-format micro-randomized trial export: a single
// (individual, decision point) pair.
struct DecisionRecord {
    std::string individual_id;
    int t = 0;                      // 1..T
    int avail = 1;                  // availability indicator
    int treat = 0;                  // treatment indicator
    double prob_treat = 0.0;        // randomization probability of treat = 1
    int obs_flag = 1;               // 1 iff the proximal outcome was observed
    std::optional<double> outcome;  // present iff obs_flag == 1
    std::vector<double> covariates;
    std::optional<double> pi_prob;  // reference-policy probability, only used for delta > 1
};

// Immutable panel of n individuals with exactly T decision points each.
//
// Records are held in individual-major order (individual, then t) and are
// also exposed column-wise so estimating-equation kernels can stream over
// contiguous arrays. Flags are stored as doubles for that reason.
class MrtPanel {
public:
    // Validates every structural invariant and sorts the records. Throws
    // DataError on violation.
    static MrtPanel from_records(std::vector<DecisionRecord> records,
                                 std::vector<std::string> covariate_names, int delta = 1);

    std::size_t n() const noexcept { return ids_.size(); }
    int T() const noexcept { return T_; }
    int delta() const noexcept { return delta_; }
    std::size_t size() const noexcept { return t_.size(); }

    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }
    // Index of the first record of individual i; records of i are
    // [offset(i), offset(i) + T).
    std::size_t offset(std::size_t i) const noexcept { return i * static_cast<std::size_t>(T_); }

    std::span<const double> t() const noexcept { return t_; }
    std::span<const double> avail() const noexcept { return avail_; }
    std::span<const double> treat() const noexcept { return treat_; }
    std::span<const double> prob_treat() const noexcept { return prob_; }
    std::span<const double> obs_flag() const noexcept { return obs_; }
    // Outcome column with 0 in place of missing values. Always read together
    // with obs_flag().
    std::span<const double> outcome() const noexcept { return outcome_; }
    bool has_pi() const noexcept { return has_pi_; }
    // Reference-policy probabilities; NaN where the cell was empty.
    std::span<const double> pi_prob() const noexcept { return pi_; }

    std::optional<std::size_t> covariate_index(const std::string& name) const;
    std::span<const double> covariate(std::size_t j) const noexcept {
        return {covariates_.data() + j * size(), size()};
    }

    DecisionRecord record(std::size_t row) const;
    std::vector<DecisionRecord> records() const;

    // Rows with avail == 1, in storage order.
    std::vector<std::size_t> available_rows() const;

private:
    MrtPanel() = default;

    int T_ = 0;
    int delta_ = 1;
    bool has_pi_ = false;
    std::vector<std::string> ids_;
    std::vector<std::string> covariate_names_;
    std::vector<double> t_, avail_, treat_, prob_, obs_, outcome_, pi_;
    std::vector<double> covariates_;  // column-major, size() * covariate count
};

// Maps panel roles to CSV column names.
struct CsvSchema {
    std::string id = "id";
    std::string t = "t";
    std::string avail = "avail";
    std::string treat = "treat";
    std::string prob_treat = "prob_treat";
    std::string obs_flag = "obs_flag";
    std::string outcome = "outcome";
    std::optional<std::string> pi_prob;  // optional column; auto-detected as "pi_prob" when unset
    // Explicit covariate list. When empty every unmapped, fully numeric
    // column becomes a covariate.
    std::vector<std::string> covariates;
};

MrtPanel load_csv(const std::filesystem::path& path, const CsvSchema& schema = {}, int delta = 1);
MrtPanel parse_csv(const std::string& text, const CsvSchema& schema = {}, int delta = 1);

// Writes the panel back in long format using the schema's column names.
// Numbers use the shortest representation that round-trips.
void write_csv(const MrtPanel& panel, const std::filesystem::path& path, const CsvSchema& schema = {});
std::string to_csv(const MrtPanel& panel, const CsvSchema& schema = {});

struct PositivityViolation {
    std::string individual_id;
    int t = 0;
    double prob_treat = 0.0;
};

struct PositivityReport {
    double margin = 0.0;
    std::vector<PositivityViolation> violations;
    bool ok() const noexcept { return violations.empty(); }
};

inline constexpr double kDefaultPositivityMargin = 0.01;

// Lists available records whose randomization probability falls outside
// [margin, 1 - margin]. Unavailable records are not checked.
PositivityReport validate_positivity(const MrtPanel& panel, double margin = kDefaultPositivityMargin);

}  // namespace cee
