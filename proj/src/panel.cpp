#include "cee/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cee/error.hpp"
#include "csv_util.hpp"

namespace cee {

namespace {

bool all_integers(const std::vector<std::string>& ids) {
    return std::all_of(ids.begin(), ids.end(), [](const std::string& s) {
        long long v = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        return ec == std::errc{} && ptr == s.data() + s.size();
    });
}

std::string where(const DecisionRecord& r) {
    return "individual '" + r.individual_id + "', t=" + std::to_string(r.t);
}

}  // namespace

MrtPanel MrtPanel::from_records(std::vector<DecisionRecord> records,
                                std::vector<std::string> covariate_names, int delta) {
    if (delta < 1) throw DataError("structure", "window length delta must be >= 1");
    const std::size_t p = covariate_names.size();
    {
        std::set<std::string> seen;
        for (const auto& name : covariate_names)
            if (!seen.insert(name).second) throw DataError("schema", "duplicate covariate name '" + name + "'");
    }

    for (const auto& r : records) {
        if (r.covariates.size() != p)
            throw DataError("structure", where(r) + ": expected " + std::to_string(p) + " covariates, got " +
                                             std::to_string(r.covariates.size()));
        for (double v : r.covariates)
            if (!std::isfinite(v)) throw DataError("value", where(r) + ": covariate values must be finite");
        if (r.avail != 0 && r.avail != 1) throw DataError("value", where(r) + ": avail must be 0 or 1");
        if (r.treat != 0 && r.treat != 1) throw DataError("value", where(r) + ": treat must be 0 or 1");
        if (r.obs_flag != 0 && r.obs_flag != 1) throw DataError("value", where(r) + ": obs_flag must be 0 or 1");
        if (!(r.prob_treat >= 0.0 && r.prob_treat <= 1.0))
            throw DataError("value", where(r) + ": prob_treat must lie in [0, 1]");
        if (r.avail == 0 && (r.treat != 0 || r.prob_treat != 0.0))
            throw DataError("structure", where(r) +
                                             ": an unavailable decision point must have treat = 0 and prob_treat = 0");
        if (r.obs_flag == 1 && (!r.outcome || !std::isfinite(*r.outcome)))
            throw DataError("consistency", where(r) + ": obs_flag = 1 but the outcome is absent or not finite");
        if (r.obs_flag == 0 && r.outcome)
            throw DataError("consistency", where(r) + ": obs_flag = 0 but an outcome is present");
        if (r.pi_prob) {
            if (!(*r.pi_prob >= 0.0 && *r.pi_prob <= 1.0))
                throw DataError("value", where(r) + ": pi_prob must lie in [0, 1]");
            if (r.avail == 0 && *r.pi_prob != 0.0)
                throw DataError("structure", where(r) + ": pi_prob must be 0 when unavailable");
        }
    }

    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t k = 0; k < records.size(); ++k) groups[records[k].individual_id].push_back(k);
    if (groups.size() < 2) throw DataError("structure", "a panel needs at least two individuals");

    std::vector<std::string> ids;
    ids.reserve(groups.size());
    for (const auto& [id, rows] : groups) ids.push_back(id);
    if (all_integers(ids)) {
        std::stable_sort(ids.begin(), ids.end(),
                         [](const std::string& a, const std::string& b) { return std::stoll(a) < std::stoll(b); });
    }

    // T is the largest group; every individual must cover 1..T exactly once.
    std::size_t T = 0;
    for (const auto& [id, rows] : groups) T = std::max(T, rows.size());
    std::vector<std::string> ragged;
    for (const auto& [id, rows] : groups) {
        std::vector<int> ts;
        for (auto k : rows) ts.push_back(records[k].t);
        std::sort(ts.begin(), ts.end());
        bool ok = ts.size() == T;
        for (std::size_t j = 0; ok && j < ts.size(); ++j) ok = ts[j] == static_cast<int>(j + 1);
        if (!ok) ragged.push_back(id);
    }
    if (!ragged.empty()) {
        std::string list;
        for (std::size_t j = 0; j < ragged.size(); ++j) list += (j ? ", " : "") + ragged[j];
        throw DataError("structure", "every individual must have exactly one record for each t = 1.." +
                                         std::to_string(T) + "; offending individuals: " + list);
    }

    MrtPanel panel;
    panel.T_ = static_cast<int>(T);
    panel.delta_ = delta;
    panel.ids_ = ids;
    panel.covariate_names_ = std::move(covariate_names);
    const std::size_t N = records.size();
    panel.t_.resize(N);
    panel.avail_.resize(N);
    panel.treat_.resize(N);
    panel.prob_.resize(N);
    panel.obs_.resize(N);
    panel.outcome_.resize(N);
    panel.pi_.assign(N, std::numeric_limits<double>::quiet_NaN());
    panel.covariates_.resize(N * p);
    panel.has_pi_ = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.pi_prob.has_value(); });

    std::size_t row = 0;
    for (const auto& id : ids) {
        auto rows = groups[id];
        std::sort(rows.begin(), rows.end(), [&](auto a, auto b) { return records[a].t < records[b].t; });
        for (auto k : rows) {
            const auto& r = records[k];
            panel.t_[row] = r.t;
            panel.avail_[row] = r.avail;
            panel.treat_[row] = r.treat;
            panel.prob_[row] = r.prob_treat;
            panel.obs_[row] = r.obs_flag;
            panel.outcome_[row] = r.outcome.value_or(0.0);
            if (r.pi_prob) panel.pi_[row] = *r.pi_prob;
            for (std::size_t j = 0; j < p; ++j) panel.covariates_[j * N + row] = r.covariates[j];
            ++row;
        }
    }
    return panel;
}

std::optional<std::size_t> MrtPanel::covariate_index(const std::string& name) const {
    auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
    if (it == covariate_names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - covariate_names_.begin());
}

DecisionRecord MrtPanel::record(std::size_t row) const {
    DecisionRecord r;
    r.individual_id = ids_[row / static_cast<std::size_t>(T_)];
    r.t = static_cast<int>(t_[row]);
    r.avail = static_cast<int>(avail_[row]);
    r.treat = static_cast<int>(treat_[row]);
    r.prob_treat = prob_[row];
    r.obs_flag = static_cast<int>(obs_[row]);
    if (r.obs_flag == 1) r.outcome = outcome_[row];
    if (!std::isnan(pi_[row])) r.pi_prob = pi_[row];
    r.covariates.resize(covariate_names_.size());
    for (std::size_t j = 0; j < covariate_names_.size(); ++j) r.covariates[j] = covariates_[j * size() + row];
    return r;
}

std::vector<DecisionRecord> MrtPanel::records() const {
    std::vector<DecisionRecord> out;
    out.reserve(size());
    for (std::size_t k = 0; k < size(); ++k) out.push_back(record(k));
    return out;
}

std::vector<std::size_t> MrtPanel::available_rows() const {
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < size(); ++k)
        if (avail_[k] == 1.0) rows.push_back(k);
    return rows;
}

// ---------------------------------------------------------------------------
// CSV

MrtPanel parse_csv(const std::string& text, const CsvSchema& schema, int delta) {
    const auto table = detail::parse_csv_table(text);
    if (table.header.empty()) throw DataError("schema", "CSV input has no header");
    const auto& header = table.header;

    auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    };
    auto require = [&](const char* role, const std::string& name) {
        auto c = find_col(name);
        if (!c) throw DataError("schema", std::string("missing column '") + name + "' for role " + role);
        return *c;
    };

    const std::size_t c_id = require("id", schema.id);
    const std::size_t c_t = require("t", schema.t);
    const std::size_t c_avail = require("avail", schema.avail);
    const std::size_t c_treat = require("treat", schema.treat);
    const std::size_t c_prob = require("prob_treat", schema.prob_treat);
    const std::size_t c_obs = require("obs_flag", schema.obs_flag);
    const std::size_t c_y = require("outcome", schema.outcome);
    std::optional<std::size_t> c_pi;
    if (schema.pi_prob) {
        c_pi = require("pi_prob", *schema.pi_prob);
    } else {
        c_pi = find_col("pi_prob");
    }

    std::set<std::size_t> mapped{c_id, c_t, c_avail, c_treat, c_prob, c_obs, c_y};
    if (c_pi) mapped.insert(*c_pi);

    std::vector<std::size_t> cov_cols;
    std::vector<std::string> cov_names;
    if (!schema.covariates.empty()) {
        for (const auto& name : schema.covariates) {
            cov_cols.push_back(require("covariate", name));
            cov_names.push_back(name);
        }
    } else {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (mapped.count(c)) continue;
            bool numeric = !table.rows.empty();
            for (const auto& row : table.rows) {
                if (!detail::parse_double(row.cells[c])) {
                    numeric = false;
                    break;
                }
            }
            if (numeric) {
                cov_cols.push_back(c);
                cov_names.push_back(header[c]);
            }
        }
    }

    auto at = [](const detail::CsvRow& row, std::size_t, const std::string& name) {
        return "line " + std::to_string(row.line) + ", column '" + name + "'";
    };
    auto binary = [&](const detail::CsvRow& row, std::size_t c) {
        auto v = detail::parse_double(row.cells[c]);
        if (!v || (*v != 0.0 && *v != 1.0))
            throw DataError("value", at(row, c, header[c]) + ": expected 0 or 1, got '" + row.cells[c] + "'");
        return static_cast<int>(*v);
    };
    auto number = [&](const detail::CsvRow& row, std::size_t c) {
        auto v = detail::parse_double(row.cells[c]);
        if (!v) throw DataError("value", at(row, c, header[c]) + ": expected a number, got '" + row.cells[c] + "'");
        return *v;
    };

    std::vector<DecisionRecord> records;
    records.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        DecisionRecord r;
        r.individual_id = row.cells[c_id];
        if (r.individual_id.empty()) throw DataError("value", at(row, c_id, header[c_id]) + ": empty identifier");
        double tv = number(row, c_t);
        if (tv != std::floor(tv) || tv < 1)
            throw DataError("value", at(row, c_t, header[c_t]) + ": decision point must be a positive integer");
        r.t = static_cast<int>(tv);
        r.avail = binary(row, c_avail);
        r.treat = binary(row, c_treat);
        r.prob_treat = number(row, c_prob);
        r.obs_flag = binary(row, c_obs);
        const std::string& ycell = row.cells[c_y];
        if (!ycell.empty()) r.outcome = number(row, c_y);
        if (r.obs_flag == 0 && r.outcome)
            throw DataError("consistency",
                            at(row, c_y, header[c_y]) + ": obs_flag = 0 but the outcome cell is '" + ycell + "'");
        if (r.obs_flag == 1 && !r.outcome)
            throw DataError("consistency", at(row, c_y, header[c_y]) + ": obs_flag = 1 but the outcome cell is empty");
        if (c_pi && !row.cells[*c_pi].empty()) r.pi_prob = number(row, *c_pi);
        if (r.avail == 0 && r.treat == 1)
            throw DataError("structure", "line " + std::to_string(row.line) +
                                             ": treat = 1 at an unavailable decision point (treatment must be 0 "
                                             "whenever avail = 0)");
        r.covariates.reserve(cov_cols.size());
        for (auto c : cov_cols) r.covariates.push_back(number(row, c));
        records.push_back(std::move(r));
    }
    return MrtPanel::from_records(std::move(records), std::move(cov_names), delta);
}

MrtPanel load_csv(const std::filesystem::path& path, const CsvSchema& schema, int delta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("io", "cannot open '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str(), schema, delta);
}

std::string to_csv(const MrtPanel& panel, const CsvSchema& schema) {
    std::string out;
    const auto& covs = panel.covariate_names();
    const std::string pi_name = schema.pi_prob.value_or("pi_prob");
    out += schema.id + "," + schema.t + "," + schema.avail + "," + schema.treat + "," + schema.prob_treat + "," +
           schema.obs_flag + "," + schema.outcome;
    if (panel.has_pi()) out += "," + pi_name;
    for (const auto& c : covs) out += "," + c;
    out += "\n";
    for (std::size_t k = 0; k < panel.size(); ++k) {
        const auto r = panel.record(k);
        out += detail::quote_if_needed(r.individual_id) + "," + std::to_string(r.t) + "," + std::to_string(r.avail) +
               "," + std::to_string(r.treat) + "," + detail::format_double(r.prob_treat) + "," +
               std::to_string(r.obs_flag) + "," + (r.outcome ? detail::format_double(*r.outcome) : std::string{});
        if (panel.has_pi()) out += "," + (r.pi_prob ? detail::format_double(*r.pi_prob) : std::string{});
        for (double v : r.covariates) out += "," + detail::format_double(v);
        out += "\n";
    }
    return out;
}

void write_csv(const MrtPanel& panel, const std::filesystem::path& path, const CsvSchema& schema) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("io", "cannot write '" + path.string() + "'");
    out << to_csv(panel, schema);
}

PositivityReport validate_positivity(const MrtPanel& panel, double margin) {
    PositivityReport report;
    report.margin = margin;
    const auto avail = panel.avail();
    const auto prob = panel.prob_treat();
    for (std::size_t k = 0; k < panel.size(); ++k) {
        if (avail[k] != 1.0) continue;
        if (prob[k] < margin || prob[k] > 1.0 - margin) {
            report.violations.push_back({panel.ids()[k / static_cast<std::size_t>(panel.T())],
                                         static_cast<int>(panel.t()[k]), prob[k]});
        }
    }
    return report;
}

}  // namespace cee
