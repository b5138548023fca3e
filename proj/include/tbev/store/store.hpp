#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "tbev/base/model.hpp"
#include "tbev/core/serialize.hpp"
#include "tbev/world/comm.hpp"
#include "tbev/world/observe.hpp"

// Pre-inferred embedding store: one directory holding manifest.json and
// records.bin. records.bin is magic "TBE1" | u32 version, then fixed-stride
// records ordered by (scenario_id, frame_index):
//   u32 scenario_id | u32 frame_index | u32 ego_id | u32 n_cavs_available
//   fused   float32[C*h*w]   (little-endian, row-major C then H then W)
//   ego_only float32[C*h*w]
//   gt bitmap: ceil(G*G/8) bytes, row-major cells, LSB-first within a byte,
//   zero-padded to the byte boundary; the record is padded to 4-byte stride.
// The fixed stride gives O(1) random access without an index.

namespace tbev {

enum class SourceSelect { fused, ego_only };

struct StoreScenarioEntry {
    std::uint32_t scenario_id = 0;
    int ego_id = 0;
    int n_frames = 0;
    std::uint64_t start_record = 0;
    bool is_eval = false;
};

struct StoreManifest {
    int version = 1;
    int channels = 0;
    int embed_h = 0;
    int embed_w = 0;
    int grid_cells = 0;
    std::uint64_t record_count = 0;
    std::vector<StoreScenarioEntry> scenarios;

    std::size_t embed_floats() const { return std::size_t(channels) * embed_h * embed_w; }
    std::size_t gt_bytes() const {
        return (std::size_t(grid_cells) * grid_cells + 7) / 8;
    }
    std::size_t record_stride() const {
        const std::size_t raw = 16 + 2 * embed_floats() * 4 + gt_bytes();
        return (raw + 3) / 4 * 4;
    }
};

struct EmbeddingRecord {
    std::uint32_t scenario_id = 0;
    std::uint32_t frame_index = 0;
    int ego_id = 0;
    int n_cavs_available = 0;
    Tensor<float> fused;
    Tensor<float> ego_only;
    BinaryGrid gt;
};

struct SequenceFrame {
    EmbeddingRecord record;
    SourceSelect source = SourceSelect::fused;

    const Tensor<float>& embedding() const {
        return source == SourceSelect::fused ? record.fused : record.ego_only;
    }
};

// Ordered frames of one scenario/ego with per-frame source selection.
struct FrameSequence {
    std::vector<SequenceFrame> frames;

    int size() const { return int(frames.size()); }
};

namespace store_detail {

inline void append_bits(std::vector<std::uint8_t>& buf, const BinaryGrid& g,
                        std::size_t padded_bytes) {
    const std::size_t start = buf.size();
    buf.resize(start + padded_bytes, 0);
    for (std::size_t i = 0; i < g.cells.size(); ++i)
        if (g.cells[i]) buf[start + i / 8] |= std::uint8_t(1u << (i % 8));
}

inline BinaryGrid read_bits(const std::uint8_t* p, int h, int w) {
    BinaryGrid g{h, w, std::vector<std::uint8_t>(std::size_t(h) * w, 0)};
    for (std::size_t i = 0; i < g.cells.size(); ++i)
        g.cells[i] = std::uint8_t((p[i / 8] >> (i % 8)) & 1u);
    return g;
}

inline void append_f32_array(std::vector<std::uint8_t>& buf, const Tensor<float>& t) {
    static_assert(sizeof(float) == 4);
    if constexpr (std::endian::native == std::endian::little) {
        bin::put_bytes(buf, t.data(), t.numel() * 4);
    } else {
        for (std::size_t i = 0; i < t.numel(); ++i) bin::put_f32(buf, t.at(i));
    }
}

inline nlohmann::json manifest_to_json(const StoreManifest& m) {
    nlohmann::json j;
    j["version"] = m.version;
    j["channels"] = m.channels;
    j["embed_h"] = m.embed_h;
    j["embed_w"] = m.embed_w;
    j["grid_cells"] = m.grid_cells;
    j["record_count"] = m.record_count;
    j["scenarios"] = nlohmann::json::array();
    for (const auto& s : m.scenarios)
        j["scenarios"].push_back({{"scenario_id", s.scenario_id},
                                  {"ego_id", s.ego_id},
                                  {"n_frames", s.n_frames},
                                  {"start_record", s.start_record},
                                  {"split", s.is_eval ? "eval" : "train"}});
    return j;
}

inline StoreManifest manifest_from_json(const nlohmann::json& j) {
    StoreManifest m;
    m.version = j.at("version").get<int>();
    m.channels = j.at("channels").get<int>();
    m.embed_h = j.at("embed_h").get<int>();
    m.embed_w = j.at("embed_w").get<int>();
    m.grid_cells = j.at("grid_cells").get<int>();
    m.record_count = j.at("record_count").get<std::uint64_t>();
    for (const auto& s : j.at("scenarios")) {
        StoreScenarioEntry e;
        e.scenario_id = s.at("scenario_id").get<std::uint32_t>();
        e.ego_id = s.at("ego_id").get<int>();
        e.n_frames = s.at("n_frames").get<int>();
        e.start_record = s.at("start_record").get<std::uint64_t>();
        e.is_eval = s.at("split").get<std::string>() == "eval";
        m.scenarios.push_back(e);
    }
    return m;
}

}  // namespace store_detail

struct SplitScenario {
    Scenario scenario;
    bool is_eval = false;
};

// Pre-infers fused and ego-only embeddings for every frame of every scenario
// and writes the store directory. Scenario ids must be strictly increasing.
template <typename T>
StoreManifest cache_embeddings(const std::filesystem::path& dir,
                               const std::vector<SplitScenario>& scenarios, const WorldConfig& world,
                               const CoopBaseModel<T>& model) {
    NoGradGuard ng;
    std::filesystem::create_directories(dir);
    StoreManifest m;
    m.channels = model.cfg.channels;
    m.embed_h = model.cfg.embed_cells();
    m.embed_w = model.cfg.embed_cells();
    m.grid_cells = world.grid_cells;

    const auto tmp = dir / "records.bin.tmp";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + tmp.string());
    {
        std::vector<std::uint8_t> head;
        bin::put_bytes(head, "TBE1", 4);
        bin::put_u32(head, 1);
        out.write(reinterpret_cast<const char*>(head.data()), std::streamsize(head.size()));
    }

    std::uint32_t prev_id = 0;
    bool first = true;
    for (const auto& [scn, is_eval] : scenarios) {
        if (!first && scn.scenario_id <= prev_id)
            throw ArgumentError("cache_embeddings: scenario ids must be strictly increasing");
        first = false;
        prev_id = scn.scenario_id;

        StoreScenarioEntry entry{scn.scenario_id, scn.ego_id, scn.n_frames(), m.record_count, is_eval};
        const CommSchedule sched = comm_schedule(scn, world);
        for (int f = 0; f < scn.n_frames(); ++f) {
            const auto& avail = sched.available[std::size_t(f)];
            std::vector<BEVEmbedding<T>> embs;
            embs.reserve(avail.size());
            for (int id : avail)
                embs.push_back(model.encode(agent_observation(scn, world, f, id), f,
                                            id == scn.ego_id ? EmbeddingSource::ego_only
                                                             : EmbeddingSource::fused_multi_cav));
            const Tensor<T> fused = model.fuse_agents(embs).data;
            const Tensor<T> ego =
                model.encode(agent_observation(scn, world, f, scn.ego_id), f, EmbeddingSource::ego_only)
                    .data;
            const BinaryGrid gt = ground_truth_map(scn, world, f);

            std::vector<std::uint8_t> rec;
            rec.reserve(m.record_stride());
            bin::put_u32(rec, scn.scenario_id);
            bin::put_u32(rec, std::uint32_t(f));
            bin::put_u32(rec, std::uint32_t(scn.ego_id));
            bin::put_u32(rec, std::uint32_t(avail.size()));
            store_detail::append_f32_array(rec, fused);
            store_detail::append_f32_array(rec, ego);
            store_detail::append_bits(rec, gt, m.record_stride() - rec.size());
            out.write(reinterpret_cast<const char*>(rec.data()), std::streamsize(rec.size()));
            ++m.record_count;
        }
        m.scenarios.push_back(entry);
    }
    out.close();
    if (!out) throw IoError("short write on " + tmp.string());
    std::filesystem::rename(tmp, dir / "records.bin");
    atomic_write_file(dir / "manifest.json", store_detail::manifest_to_json(m).dump(2) + "\n");
    return m;
}

class StoreReader {
  public:
    explicit StoreReader(const std::filesystem::path& dir) : dir_(dir) {
        std::ifstream mf(dir / "manifest.json");
        if (!mf) throw IoError("cannot open store manifest in " + dir.string());
        nlohmann::json j;
        try {
            mf >> j;
            manifest_ = store_detail::manifest_from_json(j);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed store manifest: " + std::string(e.what()));
        }
        if (manifest_.version != 1)
            throw DataError("unsupported store version " + std::to_string(manifest_.version));
        file_.open(dir / "records.bin", std::ios::binary);
        if (!file_) throw IoError("cannot open store records in " + dir.string());
        char magic[4];
        file_.read(magic, 4);
        if (!file_ || std::string(magic, 4) != "TBE1")
            throw DataError("bad store magic in " + (dir / "records.bin").string());
    }

    const StoreManifest& manifest() const { return manifest_; }

    const StoreScenarioEntry& scenario_entry(std::uint32_t scenario_id) const {
        for (const auto& s : manifest_.scenarios)
            if (s.scenario_id == scenario_id) return s;
        throw ArgumentError("store lookup: unknown scenario " + std::to_string(scenario_id));
    }

    EmbeddingRecord read(std::uint32_t scenario_id, int frame) {
        const auto& entry = scenario_entry(scenario_id);
        if (frame < 0 || frame >= entry.n_frames)
            throw ArgumentError("store lookup: scenario " + std::to_string(scenario_id) +
                                " has no frame " + std::to_string(frame));
        const std::size_t stride = manifest_.record_stride();
        const std::uint64_t idx = entry.start_record + std::uint64_t(frame);
        std::vector<std::uint8_t> buf(stride);
        file_.seekg(std::streamoff(8 + idx * stride));
        file_.read(reinterpret_cast<char*>(buf.data()), std::streamsize(stride));
        if (!file_) throw DataError("store read failed at record " + std::to_string(idx));

        bin::Reader r{buf.data(), buf.size()};
        EmbeddingRecord rec;
        rec.scenario_id = r.u32();
        rec.frame_index = r.u32();
        rec.ego_id = int(r.u32());
        rec.n_cavs_available = int(r.u32());
        if (rec.scenario_id != scenario_id || rec.frame_index != std::uint32_t(frame))
            throw DataError("store record identity mismatch at record " + std::to_string(idx));
        const std::size_t ef = manifest_.embed_floats();
        const Shape eshape{manifest_.channels, manifest_.embed_h, manifest_.embed_w};
        std::vector<float> fused(ef), ego(ef);
        static_assert(std::endian::native == std::endian::little);
        r.need(2 * ef * 4, "embedding blobs");
        std::memcpy(fused.data(), buf.data() + r.pos, ef * 4);
        std::memcpy(ego.data(), buf.data() + r.pos + ef * 4, ef * 4);
        r.pos += 2 * ef * 4;
        rec.fused = Tensor<float>::from(eshape, std::move(fused));
        rec.ego_only = Tensor<float>::from(eshape, std::move(ego));
        rec.gt = store_detail::read_bits(buf.data() + r.pos, manifest_.grid_cells,
                                         manifest_.grid_cells);
        return rec;
    }

    // Ordered records with per-frame source selection (communication
    // augmentation and failure evaluation read the same cache).
    FrameSequence read_sequence(std::uint32_t scenario_id, int start, int length,
                                const std::vector<SourceSelect>& mask) {
        if (int(mask.size()) != length)
            throw ArgumentError("read_sequence: mask length does not match sequence length");
        FrameSequence seq;
        seq.frames.reserve(std::size_t(length));
        for (int i = 0; i < length; ++i)
            seq.frames.push_back({read(scenario_id, start + i), mask[std::size_t(i)]});
        return seq;
    }

  private:
    std::filesystem::path dir_;
    StoreManifest manifest_;
    std::ifstream file_;
};

struct VerifyReport {
    bool ok = true;
    std::vector<std::string> lines;

    void check(bool pass, const std::string& what) {
        ok = ok && pass;
        lines.push_back(std::string(pass ? "OK   " : "FAIL ") + what);
    }
};

// Offline consistency check of a store directory: manifest/stride/length
// agreement, record ordering, and the single-CAV fused == ego invariant.
inline VerifyReport verify_store(const std::filesystem::path& dir) {
    VerifyReport rep;
    StoreManifest m;
    try {
        std::ifstream mf(dir / "manifest.json");
        nlohmann::json j;
        mf >> j;
        m = store_detail::manifest_from_json(j);
        rep.check(true, "manifest parses");
    } catch (const std::exception& e) {
        rep.check(false, std::string("manifest parses: ") + e.what());
        return rep;
    }

    std::uint64_t expected = 0;
    bool spans_ok = true;
    std::uint32_t prev_id = 0;
    bool first = true;
    for (const auto& s : m.scenarios) {
        spans_ok = spans_ok && s.start_record == expected && (first || s.scenario_id > prev_id);
        expected += std::uint64_t(s.n_frames);
        prev_id = s.scenario_id;
        first = false;
    }
    rep.check(spans_ok, "scenario spans are contiguous and ordered");
    rep.check(expected == m.record_count, "record count equals total scenario frames");

    std::error_code ec;
    const auto fsize = std::filesystem::file_size(dir / "records.bin", ec);
    if (ec) {
        rep.check(false, "records.bin exists");
        return rep;
    }
    rep.check(fsize == 8 + m.record_count * m.record_stride(),
              "file length equals header + stride * record count");

    std::ifstream f(dir / "records.bin", std::ios::binary);
    char magic[4];
    f.read(magic, 4);
    std::uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    rep.check(f && std::string(magic, 4) == "TBE1" && version == 1, "records magic and version");

    bool ids_ok = true, order_ok = true, single_cav_ok = true, finite_ok = true;
    const std::size_t stride = m.record_stride();
    std::vector<std::uint8_t> buf(stride);
    for (const auto& s : m.scenarios) {
        for (int fr = 0; fr < s.n_frames; ++fr) {
            f.seekg(std::streamoff(8 + (s.start_record + std::uint64_t(fr)) * stride));
            f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(stride));
            if (!f) {
                ids_ok = false;
                break;
            }
            bin::Reader r{buf.data(), buf.size()};
            const auto sid = r.u32();
            const auto fidx = r.u32();
            const auto ego = r.u32();
            const auto ncav = r.u32();
            ids_ok = ids_ok && sid == s.scenario_id && ego == std::uint32_t(s.ego_id);
            order_ok = order_ok && fidx == std::uint32_t(fr);
            const std::size_t ebytes = m.embed_floats() * 4;
            if (ncav == 1)
                single_cav_ok = single_cav_ok &&
                                std::memcmp(buf.data() + 16, buf.data() + 16 + ebytes, ebytes) == 0;
            for (std::size_t i = 0; i < 2 * m.embed_floats(); ++i) {
                float v;
                std::memcpy(&v, buf.data() + 16 + i * 4, 4);
                finite_ok = finite_ok && std::isfinite(v);
            }
        }
    }
    rep.check(ids_ok, "record scenario/ego ids match the manifest");
    rep.check(order_ok, "frame indices are dense and ordered");
    rep.check(single_cav_ok, "fused equals ego_only bit-exactly on single-CAV frames");
    rep.check(finite_ok, "all embedding floats are finite");
    return rep;
}

}  // namespace tbev
