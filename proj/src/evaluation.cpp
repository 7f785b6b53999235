#include "acc/evaluation.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace acc {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt_real(real v) {
    char buf[48];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string fmt_fixed(double v, int digits) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("short write to " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
        size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            cells.push_back(line.substr(start));
            return cells;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

real parse_real_cell(const std::string& cell, const std::string& where) {
    double v = 0;
    auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw ParseError("bad numeric cell \"" + cell + "\" in " + where);
    return static_cast<real>(v);
}

}  // namespace

int64_t ConfusionMatrix::total() const {
    int64_t s = 0;
    for (int64_t c : counts) s += c;
    return s;
}

void ConfusionMatrix::merge(const ConfusionMatrix& o) {
    if (o.n != n)
        throw ShapeMismatch("confusion merge: " + std::to_string(n) + " vs " +
                            std::to_string(o.n) + " classes");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
}

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels,
                          const std::vector<uint8_t>& mask, int n_classes) {
    if (preds.size() != labels.size() || preds.size() != mask.size())
        throw LengthMismatch("confusion: " + std::to_string(preds.size()) + " preds, " +
                             std::to_string(labels.size()) + " labels, " +
                             std::to_string(mask.size()) + " mask entries");
    if (n_classes < 1) throw UsageError("confusion: need at least one class");
    ConfusionMatrix cm(n_classes);
    for (size_t i = 0; i < preds.size(); ++i) {
        if (!mask[i]) continue;
        if (labels[i] < 0 || labels[i] >= n_classes || preds[i] < 0 || preds[i] >= n_classes)
            throw IndexOutOfRange("confusion: entry " + std::to_string(i) + " (true " +
                                  std::to_string(labels[i]) + ", predicted " +
                                  std::to_string(preds[i]) + ") outside " +
                                  std::to_string(n_classes) + " classes");
        ++cm.at(labels[i], preds[i]);
    }
    return cm;
}

std::vector<Prf> prf(const ConfusionMatrix& cm) {
    std::vector<Prf> out(static_cast<size_t>(cm.n));
    for (int c = 0; c < cm.n; ++c) {
        int64_t tp = cm.at(c, c), row = 0, col = 0;
        for (int k = 0; k < cm.n; ++k) {
            row += cm.at(c, k);
            col += cm.at(k, c);
        }
        Prf& m = out[static_cast<size_t>(c)];
        m.precision = col > 0 ? real(tp) / real(col) : real(0);
        m.recall = row > 0 ? real(tp) / real(row) : real(0);
        const real pr = m.precision + m.recall;
        m.f1 = pr > 0 ? 2 * m.precision * m.recall / pr : real(0);
    }
    return out;
}

Prf macro(const std::vector<Prf>& per_class) {
    if (per_class.empty()) throw UsageError("macro: no classes");
    Prf m;
    for (const Prf& c : per_class) {
        m.precision += c.precision;
        m.recall += c.recall;
        m.f1 += c.f1;
    }
    const real n = real(per_class.size());
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
    return m;
}

real accuracy(const ConfusionMatrix& cm) {
    const int64_t t = cm.total();
    if (t == 0) return 0;
    int64_t diag = 0;
    for (int c = 0; c < cm.n; ++c) diag += cm.at(c, c);
    return real(diag) / real(t);
}

void write_metrics_csv(const std::filesystem::path& path, Dimension dim,
                       const std::vector<MetricColumn>& columns) {
    const auto& names = classes(dim);
    std::string out = "class";
    for (const MetricColumn& col : columns) {
        if (col.per_class.size() != names.size())
            throw ShapeMismatch("metrics column \"" + col.label + "\" has " +
                                std::to_string(col.per_class.size()) + " rows for " +
                                std::to_string(names.size()) + " classes");
        out += "," + col.label + "_precision," + col.label + "_recall," + col.label + "_f1";
    }
    out += "\n";
    for (size_t c = 0; c < names.size(); ++c) {
        out += names[c];
        for (const MetricColumn& col : columns) {
            const Prf& m = col.per_class[c];
            out += "," + fmt_real(m.precision) + "," + fmt_real(m.recall) + "," + fmt_real(m.f1);
        }
        out += "\n";
    }
    out += "AVG";
    for (const MetricColumn& col : columns) {
        const Prf m = macro(col.per_class);
        out += "," + fmt_real(m.precision) + "," + fmt_real(m.recall) + "," + fmt_real(m.f1);
    }
    out += "\n";
    write_text(path, out);
}

MetricsTable read_metrics_csv(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    MetricsTable table;
    size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        std::vector<std::string> cells = split_csv_line(line);
        if (header) {
            if (cells.empty() || cells[0] != "class")
                throw FormatError(path.string() + ": first CSV column must be \"class\"");
            table.columns.assign(cells.begin() + 1, cells.end());
            header = false;
            continue;
        }
        if (cells.size() != table.columns.size() + 1)
            throw FormatError(path.string() + ": row \"" + cells[0] + "\" has " +
                              std::to_string(cells.size() - 1) + " cells, expected " +
                              std::to_string(table.columns.size()));
        table.rows.push_back(cells[0]);
        std::vector<real> row;
        row.reserve(cells.size() - 1);
        for (size_t i = 1; i < cells.size(); ++i)
            row.push_back(parse_real_cell(cells[i], path.string()));
        table.values.push_back(std::move(row));
    }
    if (header) throw FormatError(path.string() + ": empty metrics CSV");
    if (table.rows.empty() || table.rows.back() != "AVG")
        throw FormatError(path.string() + ": metrics CSV must end with an AVG row");
    return table;
}

std::string render_f1_svg(const std::vector<F1Bar>& bars) {
    if (bars.empty()) throw UsageError("svg: no bars to draw");
    // Fixed geometry so identical inputs give identical bytes.
    const int bar_w = 44, bar_gap = 10, group_gap = 34;
    const int left = 56, top = 24, axis_h = 220, bottom = 58;

    struct Group {
        std::string name;
        size_t first, count;
    };
    std::vector<Group> groups;
    for (size_t i = 0; i < bars.size(); ++i) {
        if (groups.empty() || groups.back().name != bars[i].group)
            groups.push_back({bars[i].group, i, 1});
        else
            ++groups.back().count;
    }
    int width = left + 16;
    for (const Group& g : groups)
        width += static_cast<int>(g.count) * (bar_w + bar_gap) - bar_gap + group_gap;
    const int height = top + axis_h + bottom;

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) +
         " " + std::to_string(height) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + std::to_string(left) + "\" y=\"16\" font-family=\"sans-serif\" "
         "font-size=\"13\">macro F1 by task and mode</text>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double frac = tick / 4.0;
        const int y = top + axis_h - static_cast<int>(std::lround(frac * axis_h));
        s += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(y) + "\" x2=\"" +
             std::to_string(width - 12) + "\" y2=\"" + std::to_string(y) +
             "\" stroke=\"#dddddd\"/>\n";
        s += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" + std::to_string(y + 4) +
             "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" +
             fmt_fixed(frac, 2) + "</text>\n";
    }
    static const char* kFills[] = {"#4878a8", "#e09048", "#6aa84f", "#a86a8f",
                                   "#888888", "#c05850"};
    int x = left + 8;
    for (const Group& g : groups) {
        const int gx0 = x;
        for (size_t i = 0; i < g.count; ++i) {
            const F1Bar& b = bars[g.first + i];
            const double v = std::min(std::max(double(b.f1), 0.0), 1.0);
            const int h = static_cast<int>(std::lround(v * axis_h));
            const int y = top + axis_h - h;
            s += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
                 std::to_string(bar_w) + "\" height=\"" + std::to_string(h) + "\" fill=\"" +
                 kFills[i % 6] + "\"/>\n";
            s += "<text x=\"" + std::to_string(x + bar_w / 2) + "\" y=\"" + std::to_string(y - 4) +
                 "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" +
                 fmt_fixed(double(b.f1), 2) + "</text>\n";
            s += "<text x=\"" + std::to_string(x + bar_w / 2) + "\" y=\"" +
                 std::to_string(top + axis_h + 16) +
                 "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" +
                 b.label + "</text>\n";
            x += bar_w + bar_gap;
        }
        const int gx1 = x - bar_gap;
        s += "<text x=\"" + std::to_string((gx0 + gx1) / 2) + "\" y=\"" +
             std::to_string(top + axis_h + 38) +
             "\" font-family=\"sans-serif\" font-size=\"12\" font-weight=\"bold\" "
             "text-anchor=\"middle\">" +
             g.name + "</text>\n";
        x += group_gap;
    }
    s += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(top) + "\" x2=\"" +
         std::to_string(left) + "\" y2=\"" + std::to_string(top + axis_h) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(top + axis_h) +
         "\" x2=\"" + std::to_string(width - 12) + "\" y2=\"" + std::to_string(top + axis_h) +
         "\" stroke=\"black\"/>\n";
    s += "</svg>\n";
    return s;
}

void write_f1_svg(const std::filesystem::path& path, const std::vector<F1Bar>& bars) {
    write_text(path, render_f1_svg(bars));
}

void write_confusion_json(const std::filesystem::path& path, Dimension dim,
                          const ConfusionMatrix& cm) {
    const auto& names = classes(dim);
    if (static_cast<int>(names.size()) != cm.n)
        throw ShapeMismatch("confusion for " + dim_name(dim) + " must have " +
                            std::to_string(names.size()) + " classes, got " +
                            std::to_string(cm.n));
    ordered_json j;
    j["dimension"] = dim_name(dim);
    j["classes"] = names;
    ordered_json rows = ordered_json::array();
    for (int y = 0; y < cm.n; ++y) {
        ordered_json row = ordered_json::array();
        for (int p = 0; p < cm.n; ++p) row.push_back(cm.at(y, p));
        rows.push_back(std::move(row));
    }
    j["counts"] = std::move(rows);
    write_text(path, j.dump(2) + "\n");
}

ConfusionMatrix read_confusion_json(const std::filesystem::path& path, Dimension* dim_out) {
    ordered_json j;
    try {
        j = ordered_json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    try {
        const Dimension dim = dim_from_name(j.at("dimension").get<std::string>());
        if (dim_out) *dim_out = dim;
        const auto& rows = j.at("counts");
        const int n = n_classes(dim);
        if (static_cast<int>(rows.size()) != n)
            throw FormatError(path.string() + ": expected " + std::to_string(n) + " rows");
        ConfusionMatrix cm(n);
        for (int y = 0; y < n; ++y) {
            if (static_cast<int>(rows.at(y).size()) != n)
                throw FormatError(path.string() + ": row " + std::to_string(y) + " malformed");
            for (int p = 0; p < n; ++p) {
                const int64_t v = rows.at(y).at(p).get<int64_t>();
                if (v < 0) throw FormatError(path.string() + ": negative count");
                cm.at(y, p) = v;
            }
        }
        return cm;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string format_metrics(Dimension dim, const std::vector<MetricColumn>& columns) {
    const auto& names = classes(dim);
    size_t name_w = 5;  // "class"
    for (const auto& n : names) name_w = std::max(name_w, n.size());
    auto pad = [](const std::string& s, size_t w) {
        return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
    };
    std::vector<size_t> col_w;
    for (const MetricColumn& col : columns)
        col_w.push_back(std::max<size_t>(6, col.label.size() + 4));
    std::string out = dim_name(dim) + " frame-level metrics\n";
    out += pad("class", name_w);
    for (size_t i = 0; i < columns.size(); ++i) {
        const std::string& l = columns[i].label;
        out += "  " + pad(l + " P", col_w[i]) + pad(l + " R", col_w[i]) + pad(l + " F1", col_w[i]);
    }
    out += "\n";
    auto row = [&](const std::string& name, const std::vector<Prf>& ms) {
        std::string line = pad(name, name_w);
        for (size_t i = 0; i < ms.size(); ++i)
            line += "  " + pad(fmt_fixed(ms[i].precision, 2), col_w[i]) +
                    pad(fmt_fixed(ms[i].recall, 2), col_w[i]) + pad(fmt_fixed(ms[i].f1, 2), col_w[i]);
        out += line + "\n";
    };
    for (size_t c = 0; c < names.size(); ++c) {
        std::vector<Prf> ms;
        for (const MetricColumn& col : columns) {
            if (col.per_class.size() != names.size())
                throw ShapeMismatch("metrics column \"" + col.label + "\" has " +
                                    std::to_string(col.per_class.size()) + " rows for " +
                                    std::to_string(names.size()) + " classes");
            ms.push_back(col.per_class[c]);
        }
        row(names[c], ms);
    }
    std::vector<Prf> avgs;
    for (const MetricColumn& col : columns) avgs.push_back(macro(col.per_class));
    row("AVG", avgs);
    out += "AVG is the unweighted mean over the class rows above.\n";
    return out;
}

}  // namespace acc
