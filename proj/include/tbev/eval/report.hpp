#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tbev/core/error.hpp"
#include "tbev/core/serialize.hpp"
#include "tbev/eval/evaluator.hpp"

namespace tbev {

struct ReportRow {
    std::string variant;
    int offset = 0;
    double iou = 0;
    long n_anchors = 0;
    std::string fingerprint;
};

inline std::vector<ReportRow> rows_from_curve(const std::string& variant,
                                              const std::vector<double>& iou_by_offset,
                                              long n_anchors, const std::string& fingerprint) {
    std::vector<ReportRow> rows;
    for (std::size_t k = 0; k < iou_by_offset.size(); ++k)
        rows.push_back({variant, int(k), iou_by_offset[k], n_anchors, fingerprint});
    return rows;
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream out;
    out << "variant,offset,iou,n_anchors,config_fingerprint\n";
    out.precision(9);
    for (const auto& r : rows)
        out << r.variant << ',' << r.offset << ',' << r.iou << ',' << r.n_anchors << ','
            << r.fingerprint << '\n';
    return out.str();
}

inline void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
    atomic_write_file(path, report_csv(rows));
}

inline std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path.string());
    std::vector<ReportRow> rows;
    std::string line;
    std::getline(in, line);  // header
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        ReportRow r;
        std::string field;
        try {
            std::getline(ss, r.variant, ',');
            std::getline(ss, field, ',');
            r.offset = std::stoi(field);
            std::getline(ss, field, ',');
            r.iou = std::stod(field);
            std::getline(ss, field, ',');
            r.n_anchors = std::stol(field);
            std::getline(ss, r.fingerprint, ',');
        } catch (const std::exception&) {
            throw DataError("malformed report row at " + path.string() + ":" +
                            std::to_string(line_no));
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace tbev
