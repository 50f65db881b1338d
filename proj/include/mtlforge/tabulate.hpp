#pragma once

#include "mtlforge/experiments.hpp"

#include <cstddef>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtlforge {

struct CellRef {
    std::size_t row = 0;
    std::size_t column = 0;
    bool operator==(const CellRef&) const = default;
};

// Rows are family combinations ordered by set size, then lexicographically
// in family enum order. Columns are dataset-major, scheme-minor. Datasets
// run reddit_tifu, arxiv, then the rest alphabetically; schemes run seq,
// sim, cmtl.
struct ResultsTable {
    std::string metric;
    std::vector<std::vector<FamilyId>> rows;
    std::vector<std::string> datasets;
    std::vector<SchemeKind> schemes;
    std::vector<std::vector<double>> values; // [row][column]

    // Per column: the first row in table order holding the maximum, plus
    // every later row holding the same value.
    std::vector<std::size_t> bold;
    std::vector<std::vector<std::size_t>> bold_ties;
    // Per dataset: the first maximal cell in row-major order over the
    // dataset's columns, plus every other cell holding the same value.
    std::vector<CellRef> underline;
    std::vector<std::vector<CellRef>> underline_ties;

    // Per dataset; repeated under every scheme when rendered.
    std::vector<std::optional<double>> baseline;

    std::size_t column(std::size_t dataset, std::size_t scheme) const { return dataset * schemes.size() + scheme; }
    std::size_t dataset_of(std::size_t column) const { return column / schemes.size(); }
    std::size_t scheme_of(std::size_t column) const { return column % schemes.size(); }
    std::string row_label(std::size_t row) const;

    bool is_bold(CellRef c) const;
    bool is_underlined(CellRef c) const;

    /// Aligned plain text; bold as *v*, underline as _v_, both as _*v*_.
    std::string to_text(int precision = 3) const;
    /// Machine-readable grid with flags and tie lists.
    std::string to_json() const;
    /// Grouped bar chart, one group per row, one bar per column.
    std::string to_svg() const;
};

/// Canonical dataset column order.
std::vector<std::string> order_datasets(std::vector<std::string> names);
/// Canonical row order comparator.
bool combination_less(const std::vector<FamilyId>& a, const std::vector<FamilyId>& b);

/// Baseline records (is_baseline) fill the baseline row; all others must
/// form a complete rows x datasets x schemes grid. Missing or duplicate
/// cells throw, listing them.
ResultsTable tabulate(std::span<const RunRecord> records, std::string_view metric);

/// Keeps the last record per (families, dataset, scheme, baseline) key, in
/// first-appearance order. Logs may hold reruns of the same cell.
std::vector<RunRecord> latest_per_cell(std::span<const RunRecord> records);

struct Delta {
    std::vector<FamilyId> families;
    std::string dataset;
    SchemeKind scheme = SchemeKind::SEQUENTIAL;
    double value = 0.0;
    double baseline = 0.0;
    double delta = 0.0;
};

/// value - baseline for every non-baseline record, in input order. Throws
/// when a dataset has no baseline.
std::vector<Delta> compare_to_baseline(std::span<const RunRecord> records, std::string_view metric);

/// Stores `value` into the named metric field.
void set_metric(MetricReport& report, std::string_view metric, double value);

/// CSV with header "families,dataset,scheme,<metric>". "families" is a
/// combination label ("SUM+RC+", "ALL") or "BASELINE"; baseline rows may
/// leave scheme empty. Produces one record per data line.
struct IngestedResults {
    std::string metric;
    std::vector<RunRecord> records;
};
IngestedResults ingest_results_csv(std::istream& in, std::string_view source = "csv");

} // namespace mtlforge
