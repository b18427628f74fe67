#include "attngen/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "attngen/textio.hpp"

namespace attngen {

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    return out;
}

void finish(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw DataError("write failed: " + path);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

std::string chop_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

// Two-decimal rounding keeps the vector-graphic text compact while staying
// deterministic.
std::string coord(double v) { return fmt_float(std::round(v * 100.0) / 100.0); }

std::string sanitized(std::string text) {
    for (char& c : text) {
        if (c == ',') c = ';';
        if (c == '\n' || c == '\r') c = ' ';
    }
    return text;
}

}  // namespace

std::string order_name(OcclusionOrder order) {
    switch (order) {
        case OcclusionOrder::kHigh: return "high";
        case OcclusionOrder::kLow: return "low";
        case OcclusionOrder::kRandom: return "random";
    }
    throw UsageError("order_name: unknown occlusion order");
}

OcclusionOrder parse_order(const std::string& text) {
    if (text == "high") return OcclusionOrder::kHigh;
    if (text == "low") return OcclusionOrder::kLow;
    if (text == "random") return OcclusionOrder::kRandom;
    throw ConfigError("occlusion order must be high, low, or random, got '" + text + "'");
}

void write_curve_csv(const std::string& path, const PerturbationCurve& curve) {
    auto out = open_out(path);
    out << "m,mean_acc,std,drop,order\n";
    for (const auto& row : curve.rows)
        out << row.m << ',' << fmt_float(row.mean_acc) << ',' << fmt_float(row.std_dev) << ','
            << fmt_float(row.drop) << ',' << order_name(curve.order) << '\n';
    finish(out, path);
}

PerturbationCurve load_curve_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read curve file: " + path);
    std::string line;
    if (!std::getline(in, line) || chop_cr(line) != "m,mean_acc,std,drop,order")
        throw DataError(path + ": not a perturbation curve file");

    PerturbationCurve curve;
    std::size_t line_no = 1;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        line = chop_cr(line);
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 5)
            throw DataError(path + ":" + std::to_string(line_no) + ": expected 5 fields, got " +
                            std::to_string(fields.size()));
        const std::string where = path + ":" + std::to_string(line_no);
        CurveRow row;
        row.m = parse_number<std::size_t>(fields[0], where + " m");
        row.mean_acc = parse_number<double>(fields[1], where + " mean_acc");
        row.std_dev = parse_number<double>(fields[2], where + " std");
        row.drop = parse_number<double>(fields[3], where + " drop");
        const OcclusionOrder order = parse_order(fields[4]);
        if (first) {
            curve.order = order;
            first = false;
        } else if (order != curve.order) {
            throw DataError(where + ": mixed occlusion orders in one curve");
        }
        curve.rows.push_back(row);
    }
    if (curve.rows.empty()) throw DataError(path + ": curve file holds no rows");
    return curve;
}

void render_accuracy_curve(const std::string& svg_path, const PerturbationCurve& curve) {
    if (curve.rows.size() < 2)
        throw UsageError("render_accuracy_curve: need at least 2 rows, got " +
                         std::to_string(curve.rows.size()));

    constexpr double kWidth = 640, kHeight = 440;
    constexpr double kLeft = 70, kRight = 20, kTop = 20, kBottom = 50;
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    const double m0 = static_cast<double>(curve.rows.front().m);
    const double m1 = static_cast<double>(curve.rows.back().m);

    auto x_of = [&](double m) { return kLeft + (m - m0) / (m1 - m0) * plot_w; };
    auto y_of = [&](double acc) {
        const double clamped = std::min(100.0, std::max(0.0, acc));
        return kTop + (100.0 - clamped) / 100.0 * plot_h;
    };

    auto out = open_out(svg_path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"440\" "
           "viewBox=\"0 0 640 440\">\n";
    out << "<rect width=\"640\" height=\"440\" fill=\"white\"/>\n";

    for (int tick = 0; tick <= 100; tick += 25) {
        const std::string y = coord(y_of(tick));
        out << "<line x1=\"" << coord(kLeft) << "\" y1=\"" << y << "\" x2=\""
            << coord(kLeft + plot_w) << "\" y2=\"" << y
            << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        out << "<text x=\"" << coord(kLeft - 8) << "\" y=\"" << y
            << "\" text-anchor=\"end\" dominant-baseline=\"middle\" font-size=\"12\" "
               "font-family=\"sans-serif\">"
            << tick << "</text>\n";
    }

    out << "<polygon points=\"";
    for (const auto& row : curve.rows)
        out << coord(x_of(static_cast<double>(row.m))) << ','
            << coord(y_of(row.mean_acc + row.std_dev)) << ' ';
    for (auto it = curve.rows.rbegin(); it != curve.rows.rend(); ++it)
        out << coord(x_of(static_cast<double>(it->m))) << ','
            << coord(y_of(it->mean_acc - it->std_dev)) << ' ';
    out << "\" fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\"/>\n";

    out << "<polyline points=\"";
    for (const auto& row : curve.rows)
        out << coord(x_of(static_cast<double>(row.m))) << ',' << coord(y_of(row.mean_acc)) << ' ';
    out << "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n";

    for (const auto& row : curve.rows) {
        const std::string x = coord(x_of(static_cast<double>(row.m)));
        out << "<circle cx=\"" << x << "\" cy=\"" << coord(y_of(row.mean_acc))
            << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
        out << "<text x=\"" << x << "\" y=\"" << coord(kTop + plot_h + 18)
            << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << row.m
            << "</text>\n";
    }

    out << "<line x1=\"" << coord(kLeft) << "\" y1=\"" << coord(kTop) << "\" x2=\"" << coord(kLeft)
        << "\" y2=\"" << coord(kTop + plot_h) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    out << "<line x1=\"" << coord(kLeft) << "\" y1=\"" << coord(kTop + plot_h) << "\" x2=\""
        << coord(kLeft + plot_w) << "\" y2=\"" << coord(kTop + plot_h)
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";

    out << "<text x=\"" << coord(kLeft + plot_w / 2) << "\" y=\"" << coord(kHeight - 12)
        << "\" text-anchor=\"middle\" font-size=\"14\" font-family=\"sans-serif\">positions "
           "masked (m), order: "
        << order_name(curve.order) << "</text>\n";
    out << "<text x=\"16\" y=\"" << coord(kTop + plot_h / 2)
        << "\" text-anchor=\"middle\" font-size=\"14\" font-family=\"sans-serif\" "
           "transform=\"rotate(-90 16 "
        << coord(kTop + plot_h / 2) << ")\">accuracy (%)</text>\n";
    out << "</svg>\n";
    finish(out, svg_path);
}

void write_mask_pixmap(const std::string& path, std::size_t length,
                       const std::vector<MaskPlan>& plans_per_alpha) {
    if (plans_per_alpha.empty() || plans_per_alpha.front().indices.empty())
        throw UsageError("write_mask_pixmap: nothing to render");
    const std::size_t batch = plans_per_alpha.front().indices.size();
    for (const auto& plan : plans_per_alpha)
        if (plan.indices.size() != batch)
            throw ShapeError("write_mask_pixmap: plans cover differing sequence counts");

    auto out = open_out(path);
    out << "P6\n" << length << ' ' << plans_per_alpha.size() * batch << "\n255\n";
    std::string row;
    for (const auto& plan : plans_per_alpha) {
        for (std::size_t b = 0; b < batch; ++b) {
            row.assign(length * 3, '\0');
            for (std::size_t i = 0; i < length; ++i) row[i * 3 + 2] = '\xff';
            for (std::size_t i : plan.indices[b]) {
                if (i >= length) throw UsageError("write_mask_pixmap: index out of range");
                row[i * 3 + 0] = '\xff';
                row[i * 3 + 2] = '\0';
            }
            out.write(row.data(), static_cast<std::streamsize>(row.size()));
        }
    }
    finish(out, path);
}

void write_mask_csv(const std::string& path, std::size_t length,
                    const std::vector<double>& alphas,
                    const std::vector<MaskPlan>& plans_per_alpha) {
    if (alphas.size() != plans_per_alpha.size())
        throw UsageError("write_mask_csv: " + std::to_string(alphas.size()) + " alphas for " +
                         std::to_string(plans_per_alpha.size()) + " plans");
    auto out = open_out(path);
    out << "seq_index,alpha,position,masked\n";
    std::vector<char> masked(length);
    for (std::size_t a = 0; a < alphas.size(); ++a) {
        const MaskPlan& plan = plans_per_alpha[a];
        const std::string alpha_text = fmt_float(alphas[a]);
        for (std::size_t b = 0; b < plan.indices.size(); ++b) {
            std::fill(masked.begin(), masked.end(), 0);
            for (std::size_t i : plan.indices[b]) {
                if (i >= length) throw UsageError("write_mask_csv: index out of range");
                masked[i] = 1;
            }
            for (std::size_t i = 0; i < length; ++i)
                out << b << ',' << alpha_text << ',' << i << ',' << int(masked[i]) << '\n';
        }
    }
    finish(out, path);
}

void write_ablation_csv(const std::string& path, const std::vector<AblationArm>& arms) {
    auto out = open_out(path);
    out << "arm,alpha,lambda,mask_source,best_val_acc,best_epoch,convergence_epoch,epochs_run,"
           "status,detail\n";
    for (const auto& arm : arms) {
        const char* source = arm.alpha == 0.0 ? "none" : (arm.random_mask ? "random" : "attention");
        out << arm.label << ',' << fmt_float(arm.alpha) << ',' << fmt_float(arm.lambda) << ','
            << source << ',';
        if (arm.ok) {
            out << fmt_float(arm.result.best_val_acc) << ',' << arm.result.best_epoch << ','
                << arm.result.convergence_epoch << ',' << arm.result.epochs_run << ",ok,\n";
        } else {
            out << "0,0,0,0,failed," << sanitized(arm.error) << '\n';
        }
    }
    finish(out, path);
}

}  // namespace attngen
