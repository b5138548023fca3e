#pragma once

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "tbev/core/serialize.hpp"

namespace tbev {

struct MetricsRow {
    int epoch = 0;
    double train_loss = 0;
    double eval_iou = 0;
    double seconds = 0;
};

// Append-only per-epoch log: `epoch,train_loss,eval_iou,seconds`.
inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream out;
    out << "epoch,train_loss,eval_iou,seconds\n";
    out.precision(9);
    for (const auto& r : rows)
        out << r.epoch << ',' << r.train_loss << ',' << r.eval_iou << ',' << r.seconds << '\n';
    return out.str();
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
    atomic_write_file(path, metrics_csv(rows));
}

}  // namespace tbev
