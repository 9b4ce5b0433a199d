#include "topa/feature_file.hpp"

#include <atomic>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "topa/error.hpp"

namespace topa {

namespace {

constexpr char kMagic[8] = {'T', 'O', 'P', 'A', 'F', 'T', '0', '1'};

std::atomic<std::uint64_t> g_bytes_read{0};

template <typename T>
void write_pod(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    g_bytes_read += sizeof(T);
    return value;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
    std::uint32_t len = read_pod<std::uint32_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), len);
    g_bytes_read += len;
    return s;
}

}  // namespace

void write_feature_file(const std::string& path, const FeatureFile& file) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, file.dimension);
    write_string(out, file.descriptor);
    write_string(out, file.metadata_json);
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(file.rows.size()));
    for (const auto& row : file.rows) {
        if (row.size() != file.dimension) {
            throw Error(ErrorCode::DimensionMismatch, "row width != header dimension in " + path);
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw Error(ErrorCode::IoError, "short write to " + path);
}

FeatureFile read_feature_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    g_bytes_read += sizeof(magic);
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw Error(ErrorCode::IoError, path + " is not a feature file");
    }
    FeatureFile file;
    file.dimension = read_pod<std::uint32_t>(in);
    file.descriptor = read_string(in);
    file.metadata_json = read_string(in);
    std::uint64_t count = read_pod<std::uint64_t>(in);
    file.rows.resize(count);
    for (auto& row : file.rows) {
        row.resize(file.dimension);
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        g_bytes_read += row.size() * sizeof(float);
    }
    if (!in) throw Error(ErrorCode::IoError, "truncated feature file " + path);
    return file;
}

void write_feature_index(const std::string& path,
                         const std::unordered_map<std::string, std::uint64_t>& index) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    for (const auto& [hash, row] : index) {
        out << nlohmann::json{{"hash", hash}, {"row", row}}.dump() << '\n';
    }
}

std::unordered_map<std::string, std::uint64_t> read_feature_index(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::unordered_map<std::string, std::uint64_t> index;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json record = nlohmann::json::parse(line);
        index[record.at("hash").get<std::string>()] = record.at("row").get<std::uint64_t>();
    }
    return index;
}

std::uint64_t feature_io_bytes_read() { return g_bytes_read.load(); }
void reset_feature_io_bytes() { g_bytes_read.store(0); }

}  // namespace topa
