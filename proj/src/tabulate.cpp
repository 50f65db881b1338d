#include "mtlforge/tabulate.hpp"

#include "mtlforge/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <tuple>

namespace mtlforge {

using json = nlohmann::json;

namespace {

std::string fixed(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

std::string cell_name(const std::vector<FamilyId>& fams, const std::string& dataset, SchemeKind scheme) {
    return combination_label(fams) + "/" + dataset + "/" + std::string(to_string(scheme));
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e + 1 - b);
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

} // namespace

std::vector<std::string> order_datasets(std::vector<std::string> names) {
    auto rank = [](const std::string& n) { return n == "reddit_tifu" ? 0 : n == "arxiv" ? 1 : 2; };
    std::sort(names.begin(), names.end(),
              [&](const auto& a, const auto& b) { return std::tuple(rank(a), a) < std::tuple(rank(b), b); });
    names.erase(std::unique(names.begin(), names.end()), names.end());
    return names;
}

bool combination_less(const std::vector<FamilyId>& a, const std::vector<FamilyId>& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
}

std::string ResultsTable::row_label(std::size_t row) const { return combination_label(rows.at(row)); }

bool ResultsTable::is_bold(CellRef c) const {
    if (bold.at(c.column) == c.row) return true;
    const auto& t = bold_ties.at(c.column);
    return std::find(t.begin(), t.end(), c.row) != t.end();
}

bool ResultsTable::is_underlined(CellRef c) const {
    const auto d = dataset_of(c.column);
    if (underline.at(d) == c) return true;
    const auto& t = underline_ties.at(d);
    return std::find(t.begin(), t.end(), c) != t.end();
}

ResultsTable tabulate(std::span<const RunRecord> records, std::string_view metric) {
    ResultsTable t;
    t.metric = std::string(metric);
    MetricReport probe;
    probe.get(metric); // rejects unknown metric names

    std::vector<std::string> ds_names;
    std::vector<SchemeKind> kinds;
    for (const auto& r : records) {
        ds_names.push_back(r.dataset());
        if (r.is_baseline) continue;
        if (r.plan.families.empty()) throw Error("non-baseline record without families");
        const auto fams = canonical_families(r.plan.families);
        if (std::find(t.rows.begin(), t.rows.end(), fams) == t.rows.end()) t.rows.push_back(fams);
        if (std::find(kinds.begin(), kinds.end(), r.plan.scheme.kind) == kinds.end())
            kinds.push_back(r.plan.scheme.kind);
    }
    if (t.rows.empty()) throw Error("no result records to tabulate");
    std::sort(t.rows.begin(), t.rows.end(), combination_less);
    std::sort(kinds.begin(), kinds.end());
    t.schemes = kinds;
    t.datasets = order_datasets(ds_names);

    const auto n_cols = t.datasets.size() * t.schemes.size();
    std::vector<std::vector<std::optional<double>>> grid(t.rows.size(), std::vector<std::optional<double>>(n_cols));
    t.baseline.assign(t.datasets.size(), std::nullopt);
    auto ds_index = [&](const std::string& d) {
        return static_cast<std::size_t>(std::find(t.datasets.begin(), t.datasets.end(), d) - t.datasets.begin());
    };
    std::vector<std::string> duplicates;
    for (const auto& r : records) {
        const auto value = r.report.get(metric);
        const auto d = ds_index(r.dataset());
        if (r.is_baseline) {
            if (t.baseline[d]) duplicates.push_back("BASELINE/" + r.dataset());
            if (!value) throw Error("baseline for " + r.dataset() + " has no " + std::string(metric) + " value");
            t.baseline[d] = value;
            continue;
        }
        const auto fams = canonical_families(r.plan.families);
        const auto row =
            static_cast<std::size_t>(std::find(t.rows.begin(), t.rows.end(), fams) - t.rows.begin());
        const auto s = static_cast<std::size_t>(std::find(t.schemes.begin(), t.schemes.end(), r.plan.scheme.kind) -
                                                t.schemes.begin());
        auto& cell = grid[row][t.column(d, s)];
        if (cell) duplicates.push_back(cell_name(fams, r.dataset(), r.plan.scheme.kind));
        if (!value) continue; // null metric counts as missing
        cell = value;
    }
    if (!duplicates.empty()) {
        std::string msg = "duplicate result cells:";
        for (const auto& d : duplicates) msg += " " + d;
        throw Error(msg);
    }
    std::vector<std::string> missing;
    for (std::size_t row = 0; row < t.rows.size(); ++row)
        for (std::size_t c = 0; c < n_cols; ++c)
            if (!grid[row][c])
                missing.push_back(cell_name(t.rows[row], t.datasets[t.dataset_of(c)], t.schemes[t.scheme_of(c)]));
    if (!missing.empty()) {
        std::string msg = "ragged result grid, missing " + std::to_string(missing.size()) + " cell(s):";
        for (const auto& m : missing) msg += " " + m;
        throw Error(msg);
    }

    t.values.assign(t.rows.size(), std::vector<double>(n_cols));
    for (std::size_t row = 0; row < t.rows.size(); ++row)
        for (std::size_t c = 0; c < n_cols; ++c) t.values[row][c] = *grid[row][c];

    t.bold.assign(n_cols, 0);
    t.bold_ties.assign(n_cols, {});
    for (std::size_t c = 0; c < n_cols; ++c) {
        for (std::size_t row = 1; row < t.rows.size(); ++row)
            if (t.values[row][c] > t.values[t.bold[c]][c]) t.bold[c] = row;
        for (std::size_t row = t.bold[c] + 1; row < t.rows.size(); ++row)
            if (t.values[row][c] == t.values[t.bold[c]][c]) t.bold_ties[c].push_back(row);
    }

    t.underline.assign(t.datasets.size(), {});
    t.underline_ties.assign(t.datasets.size(), {});
    for (std::size_t d = 0; d < t.datasets.size(); ++d) {
        auto& best = t.underline[d];
        best = {0, t.column(d, 0)};
        for (std::size_t row = 0; row < t.rows.size(); ++row)
            for (std::size_t s = 0; s < t.schemes.size(); ++s) {
                const auto c = t.column(d, s);
                if (t.values[row][c] > t.values[best.row][best.column]) best = {row, c};
            }
        const auto top = t.values[best.row][best.column];
        for (std::size_t row = 0; row < t.rows.size(); ++row)
            for (std::size_t s = 0; s < t.schemes.size(); ++s) {
                const CellRef ref{row, t.column(d, s)};
                if (!(ref == best) && t.values[row][ref.column] == top) t.underline_ties[d].push_back(ref);
            }
    }
    return t;
}

std::string ResultsTable::to_text(int precision) const {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header = {"families"};
    for (std::size_t c = 0; c < datasets.size() * schemes.size(); ++c)
        header.push_back(datasets[dataset_of(c)] + "/" + std::string(to_string(schemes[scheme_of(c)])));
    cells.push_back(header);
    for (std::size_t row = 0; row < rows.size(); ++row) {
        std::vector<std::string> line = {row_label(row)};
        for (std::size_t c = 0; c < values[row].size(); ++c) {
            auto v = fixed(values[row][c], precision);
            if (is_bold({row, c})) v = "*" + v + "*";
            if (is_underlined({row, c})) v = "_" + v + "_";
            line.push_back(v);
        }
        cells.push_back(line);
    }
    if (std::any_of(baseline.begin(), baseline.end(), [](const auto& b) { return b.has_value(); })) {
        std::vector<std::string> line = {"baseline"};
        for (std::size_t c = 0; c < datasets.size() * schemes.size(); ++c) {
            const auto& b = baseline[dataset_of(c)];
            line.push_back(b ? fixed(*b, precision) + "+" : "-");
        }
        cells.push_back(line);
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& line : cells)
        for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
    std::ostringstream out;
    out << "metric: " << metric << '\n';
    for (std::size_t l = 0; l < cells.size(); ++l) {
        for (std::size_t i = 0; i < cells[l].size(); ++i) {
            const auto& s = cells[l][i];
            if (i == 0) out << s << std::string(width[i] - s.size(), ' ');
            else out << "  " << std::string(width[i] - s.size(), ' ') << s;
        }
        out << '\n';
        if (l == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w + 2;
            out << std::string(total - 2, '-') << '\n';
        }
    }
    if (!baseline.empty() && std::any_of(baseline.begin(), baseline.end(), [](const auto& b) { return b.has_value(); }))
        out << "+ baseline without a training scheme, repeated per scheme\n";
    return out.str();
}

std::string ResultsTable::to_json() const {
    json j;
    j["metric"] = metric;
    j["datasets"] = datasets;
    json sch = json::array();
    for (auto s : schemes) sch.push_back(std::string(to_string(s)));
    j["schemes"] = sch;
    json rows_json = json::array();
    for (std::size_t row = 0; row < rows.size(); ++row) {
        json fams = json::array();
        for (auto f : rows[row]) fams.push_back(std::string(to_string(f)));
        json cells = json::array();
        for (std::size_t c = 0; c < values[row].size(); ++c) {
            const auto d = dataset_of(c);
            const auto& bt = bold_ties[c];
            const auto& ut = underline_ties[d];
            cells.push_back({{"dataset", datasets[d]},
                             {"scheme", std::string(to_string(schemes[scheme_of(c)]))},
                             {"value", values[row][c]},
                             {"bold", bold[c] == row},
                             {"bold_tie", std::find(bt.begin(), bt.end(), row) != bt.end()},
                             {"underline", underline[d] == CellRef{row, c}},
                             {"underline_tie", std::find(ut.begin(), ut.end(), CellRef{row, c}) != ut.end()}});
        }
        rows_json.push_back({{"label", row_label(row)}, {"families", fams}, {"cells", cells}});
    }
    j["rows"] = rows_json;
    json base = json::object();
    for (std::size_t d = 0; d < datasets.size(); ++d)
        base[datasets[d]] = baseline[d] ? json(*baseline[d]) : json(nullptr);
    j["baseline"] = base;
    return j.dump(2) + '\n';
}

std::string ResultsTable::to_svg() const {
    const std::size_t n_cols = datasets.size() * schemes.size();
    const int bar = 10, gap = 14, left = 60, top = 30, plot_h = 240, legend_h = 16 * static_cast<int>(n_cols);
    const int group_w = static_cast<int>(n_cols) * bar + gap;
    const int width = left + static_cast<int>(rows.size()) * group_w + 20;
    const int height = top + plot_h + 70 + legend_h;
    double top_value = 0.0;
    for (const auto& r : values)
        for (double v : r) top_value = std::max(top_value, v);
    for (const auto& b : baseline)
        if (b) top_value = std::max(top_value, *b);
    if (top_value <= 0.0) top_value = 1.0;
    static const char* palette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860",
                                    "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd"};
    auto y_of = [&](double v) { return top + plot_h - static_cast<int>(v / top_value * plot_h); };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << left << "\" y=\"16\" font-size=\"13\">" << xml_escape(metric) << "</text>\n";
    out << "<line x1=\"" << left - 4 << "\" y1=\"" << top + plot_h << "\" x2=\"" << width - 10 << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = top_value * k / 4.0;
        out << "<text x=\"" << left - 8 << "\" y=\"" << y_of(v) + 3 << "\" text-anchor=\"end\">" << fixed(v, 3)
            << "</text>\n";
    }
    for (std::size_t row = 0; row < rows.size(); ++row) {
        const int gx = left + static_cast<int>(row) * group_w;
        for (std::size_t c = 0; c < n_cols; ++c) {
            const double v = values[row][c];
            const int x = gx + static_cast<int>(c) * bar;
            const int y = y_of(v);
            out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar - 1 << "\" height=\""
                << top + plot_h - y << "\" fill=\"" << palette[c % 10] << "\""
                << (is_bold({row, c}) ? " stroke=\"black\"" : "") << "><title>" << xml_escape(row_label(row)) << " "
                << xml_escape(datasets[dataset_of(c)]) << "/" << to_string(schemes[scheme_of(c)]) << " "
                << fixed(v, 3) << "</title></rect>\n";
        }
        out << "<text x=\"" << gx << "\" y=\"" << top + plot_h + 14 << "\" transform=\"rotate(30 " << gx << ","
            << top + plot_h + 14 << ")\">" << xml_escape(row_label(row)) << "</text>\n";
    }
    for (std::size_t d = 0; d < datasets.size(); ++d)
        if (baseline[d]) {
            const int y = y_of(*baseline[d]);
            out << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << width - 10 << "\" y2=\"" << y
                << "\" stroke=\"" << palette[column(d, 0) % 10] << "\" stroke-dasharray=\"4 3\"><title>baseline "
                << xml_escape(datasets[d]) << " " << fixed(*baseline[d], 3) << "</title></line>\n";
        }
    for (std::size_t c = 0; c < n_cols; ++c) {
        const int y = top + plot_h + 60 + 16 * static_cast<int>(c);
        out << "<rect x=\"" << left << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\"" << palette[c % 10]
            << "\"/><text x=\"" << left + 14 << "\" y=\"" << y << "\">" << xml_escape(datasets[dataset_of(c)]) << "/"
            << to_string(schemes[scheme_of(c)]) << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

std::vector<RunRecord> latest_per_cell(std::span<const RunRecord> records) {
    using Key = std::tuple<std::vector<FamilyId>, std::string, int, bool>;
    std::map<Key, std::size_t> slot;
    std::vector<RunRecord> out;
    for (const auto& r : records) {
        Key k{canonical_families(r.plan.families), r.dataset(), r.is_baseline ? -1 : static_cast<int>(r.plan.scheme.kind),
              r.is_baseline};
        auto it = slot.find(k);
        if (it == slot.end()) {
            slot.emplace(k, out.size());
            out.push_back(r);
        } else {
            out[it->second] = r;
        }
    }
    return out;
}

std::vector<Delta> compare_to_baseline(std::span<const RunRecord> records, std::string_view metric) {
    std::map<std::string, double> base;
    for (const auto& r : records)
        if (r.is_baseline) {
            const auto v = r.report.get(metric);
            if (!v) throw Error("baseline for " + r.dataset() + " has no " + std::string(metric) + " value");
            base[r.dataset()] = *v;
        }
    std::vector<Delta> out;
    for (const auto& r : records) {
        if (r.is_baseline) continue;
        auto it = base.find(r.dataset());
        if (it == base.end()) throw Error("no baseline record for dataset '" + r.dataset() + "'");
        const auto v = r.report.get(metric);
        if (!v) throw Error("record " + r.plan.id() + " has no " + std::string(metric) + " value");
        out.push_back({canonical_families(r.plan.families), r.dataset(), r.plan.scheme.kind, *v, it->second,
                       *v - it->second});
    }
    return out;
}

void set_metric(MetricReport& report, std::string_view metric, double value) {
    if (metric == "bertscore") report.bertscore_f = value;
    else if (metric == "bleu") report.bleu = value;
    else if (metric == "meteor") report.meteor = value;
    else if (metric == "rouge1") report.rouge1_f = value;
    else if (metric == "rouge2") report.rouge2_f = value;
    else if (metric == "rougeL") report.rougeL_f = value;
    else throw Error("unknown metric '" + std::string(metric) + "'");
}

IngestedResults ingest_results_csv(std::istream& in, std::string_view source) {
    auto split = [](const std::string& line) {
        std::vector<std::string> out;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) out.push_back(trim(f));
        if (!line.empty() && line.back() == ',') out.emplace_back();
        return out;
    };
    IngestedResults res;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty() || trim(line)[0] == '#') continue;
        const auto where = std::string(source) + ": line " + std::to_string(line_no);
        const auto f = split(line);
        if (!have_header) {
            if (f.size() != 4 || f[0] != "families" || f[1] != "dataset" || f[2] != "scheme")
                throw Error(where + ", expected header families,dataset,scheme,<metric>");
            MetricReport probe;
            try {
                probe.get(f[3]);
            } catch (const Error& e) {
                throw Error(where + ", " + e.what());
            }
            res.metric = f[3];
            have_header = true;
            continue;
        }
        if (f.size() != 4) throw Error(where + ", expected 4 fields but got " + std::to_string(f.size()));
        RunRecord r;
        r.plan.downstream = f[1];
        if (f[1].empty()) throw Error(where + ", empty dataset");
        try {
            if (f[0] == "BASELINE" || f[0] == "baseline") {
                r.is_baseline = true;
            } else {
                r.plan.families = parse_combination(f[0]);
                r.plan.scheme.kind = parse_scheme(f[2]);
                if (r.plan.scheme.kind == SchemeKind::CMTL) r.plan.scheme.mixing = MixingStrategy::EQUAL;
            }
            std::size_t used = 0;
            const double v = std::stod(f[3], &used);
            if (used != f[3].size()) throw Error("trailing characters in value '" + f[3] + "'");
            set_metric(r.report, res.metric, v);
        } catch (const std::invalid_argument&) {
            throw Error(where + ", value '" + f[3] + "' is not a number");
        } catch (const std::out_of_range&) {
            throw Error(where + ", value '" + f[3] + "' is out of range");
        } catch (const Error& e) {
            throw Error(where + ", " + e.what());
        }
        r.trainer_id = "ingested";
        res.records.push_back(std::move(r));
    }
    if (!have_header) throw Error(std::string(source) + ": empty results file");
    return res;
}

} // namespace mtlforge
