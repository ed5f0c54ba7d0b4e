#include "mcddpm/data_io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "mcddpm/errors.hpp"

namespace mcddpm {

namespace {

void require_little_endian() {
    if constexpr (std::endian::native != std::endian::little)
        throw data_error("raw volume io requires a little-endian host");
}

struct Sidecar {
    int h = 0, w = 0, d = 0;
    std::string dtype;
    double spacing[3] = {1.0, 1.0, 1.0};
};

Sidecar read_sidecar(const std::filesystem::path& hdr) {
    std::ifstream in(hdr);
    if (!in) throw data_error("cannot open header: " + hdr.string());
    Sidecar sc;
    std::string line;
    while (std::getline(in, line)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string key = line.substr(0, colon);
        std::istringstream val(line.substr(colon + 1));
        if (key == "dims") {
            if (!(val >> sc.h >> sc.w >> sc.d)) throw data_error("bad dims in " + hdr.string());
        } else if (key == "dtype") {
            val >> sc.dtype;
        } else if (key == "spacing") {
            val >> sc.spacing[0] >> sc.spacing[1] >> sc.spacing[2];
        }
    }
    if (sc.h <= 0 || sc.w <= 0 || sc.d <= 0 || sc.dtype.empty())
        throw data_error("incomplete header: " + hdr.string());
    return sc;
}

void write_sidecar(const std::filesystem::path& hdr, int h, int w, int d,
                   const std::string& dtype) {
    std::ofstream out(hdr);
    if (!out) throw data_error("cannot write header: " + hdr.string());
    out << "dims: " << h << ' ' << w << ' ' << d << '\n'
        << "dtype: " << dtype << '\n'
        << "spacing: 1 1 1\n";
}

template <typename T>
void write_raw(const std::filesystem::path& raw, const std::vector<T>& data) {
    require_little_endian();
    std::ofstream out(raw, std::ios::binary);
    if (!out) throw data_error("cannot write payload: " + raw.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(T)));
}

template <typename T>
void read_raw(const std::filesystem::path& raw, std::vector<T>& data) {
    require_little_endian();
    std::ifstream in(raw, std::ios::binary | std::ios::ate);
    if (!in) throw data_error("cannot open payload: " + raw.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != data.size() * sizeof(T))
        throw data_error("payload size mismatch in " + raw.string() + ": expected " +
                         std::to_string(data.size() * sizeof(T)) + " bytes, found " +
                         std::to_string(bytes));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
}

}  // namespace

std::string to_string(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::kTrain;
    if (s == "val") return Split::kVal;
    if (s == "test") return Split::kTest;
    throw data_error("unknown split: " + s);
}

void write_volume(const std::filesystem::path& base, const Volume& v) {
    write_sidecar(base.string() + ".hdr", v.h, v.w, v.d, "float32");
    write_raw(base.string() + ".raw", v.data);
}

void write_mask(const std::filesystem::path& base, const BinaryMap& m) {
    write_sidecar(base.string() + ".hdr", m.h, m.w, m.d, "uint8");
    write_raw(base.string() + ".raw", m.data);
}

Volume read_volume(const std::filesystem::path& base) {
    const Sidecar sc = read_sidecar(base.string() + ".hdr");
    if (sc.dtype != "float32")
        throw data_error("expected float32 volume at " + base.string() + ", got " + sc.dtype);
    Volume v(sc.h, sc.w, sc.d);
    read_raw(base.string() + ".raw", v.data);
    return v;
}

BinaryMap read_mask(const std::filesystem::path& base) {
    const Sidecar sc = read_sidecar(base.string() + ".hdr");
    if (sc.dtype != "uint8")
        throw data_error("expected uint8 mask at " + base.string() + ", got " + sc.dtype);
    BinaryMap m(sc.h, sc.w, sc.d);
    read_raw(base.string() + ".raw", m.data);
    for (auto v : m.data)
        if (v > 1) throw data_error("mask payload is not binary: " + base.string());
    return m;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& rows) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write manifest: " + path.string());
    out << "subject_id,split,volume,ground_truth\n";
    for (const auto& r : rows)
        out << r.subject_id << ',' << to_string(r.split) << ',' << r.volume_path << ','
            << r.ground_truth_path << '\n';
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open manifest: " + path.string());
    std::vector<ManifestEntry> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("subject_id,", 0) == 0) continue;  // header row
        }
        std::istringstream ss(line);
        std::string id, split, vol, gt;
        std::getline(ss, id, ',');
        std::getline(ss, split, ',');
        std::getline(ss, vol, ',');
        std::getline(ss, gt, ',');
        if (id.empty() || vol.empty()) throw data_error("malformed manifest row: " + line);
        rows.push_back({id, parse_split(split), vol, gt});
    }
    return rows;
}

std::vector<VolumeRecord> load_dataset(const std::filesystem::path& manifest_path) {
    const auto rows = read_manifest(manifest_path);
    const auto dir = manifest_path.parent_path();
    std::vector<VolumeRecord> records;
    records.reserve(rows.size());
    for (const auto& r : rows) {
        VolumeRecord rec;
        rec.subject_id = r.subject_id;
        rec.split = r.split;
        rec.volume = read_volume(dir / r.volume_path);
        if (!r.ground_truth_path.empty()) {
            if (r.split == Split::kTrain)
                throw data_error("train split must not carry ground truth (subject " +
                                 r.subject_id + ")");
            rec.ground_truth = read_mask(dir / r.ground_truth_path);
            if (rec.ground_truth->h != rec.volume.h || rec.ground_truth->w != rec.volume.w ||
                rec.ground_truth->d != rec.volume.d)
                throw data_error("ground truth dims mismatch for subject " + r.subject_id);
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<const VolumeRecord*> select_split(const std::vector<VolumeRecord>& records, Split s) {
    std::vector<const VolumeRecord*> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(&r);
    return out;
}

}  // namespace mcddpm
