#include "sspnet/checkpoint_io.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace sspnet {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'P', 'N', 'E', 'T', 'C', 'K'};

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

void append_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void append_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw IntegrityError("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

uint32_t crc32_bytes(const uint8_t* data, size_t size) {
    static const auto table = make_crc_table();
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < size; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

void write_blob_file(const BlobFile& blob, const std::filesystem::path& path) {
    std::vector<uint8_t> out(kMagic, kMagic + sizeof(kMagic));
    append_u32(out, kBlobFormatVersion);
    const std::string header = blob.header.dump();
    append_u64(out, header.size());
    out.insert(out.end(), header.begin(), header.end());
    append_u64(out, blob.arrays.size());
    for (const auto& [name, tensor] : blob.arrays) {
        append_u32(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        append_u32(out, static_cast<uint32_t>(tensor.rank()));
        for (int d : tensor.shape()) append_u64(out, static_cast<uint64_t>(d));
        const size_t bytes = static_cast<size_t>(tensor.numel()) * sizeof(double);
        const size_t at = out.size();
        out.resize(at + bytes);
        std::memcpy(out.data() + at, tensor.data(), bytes);
    }
    append_u32(out, crc32_bytes(out.data(), out.size()));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing checkpoint: " + path.string());
}

BlobFile read_blob_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path.string());
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) + 4 + 4) throw IntegrityError("checkpoint: truncated file");
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw IntegrityError("checkpoint: not a checkpoint file (bad magic)");
    uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<uint32_t>(buf[buf.size() - 4 + i]) << (8 * i);
    if (crc32_bytes(buf.data(), buf.size() - 4) != stored_crc)
        throw IntegrityError("checkpoint: checksum mismatch (file corrupted or truncated)");

    Reader r{buf, sizeof(kMagic)};
    const uint32_t version = r.u32();
    if (version != kBlobFormatVersion)
        throw VersionError("checkpoint: format version " + std::to_string(version) +
                           " unsupported (expected " + std::to_string(kBlobFormatVersion) + ")");
    BlobFile blob;
    const uint64_t header_len = r.u64();
    const std::string header = r.str(header_len);
    try {
        blob.header = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("checkpoint: bad header JSON: ") + e.what());
    }
    const uint64_t count = r.u64();
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        const uint32_t rank = r.u32();
        std::vector<int> shape;
        for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.u64()));
        Tensor t(shape);
        const size_t bytes = static_cast<size_t>(t.numel()) * sizeof(double);
        r.need(bytes);
        std::memcpy(t.data(), buf.data() + r.pos, bytes);
        r.pos += bytes;
        blob.arrays.emplace_back(std::move(name), std::move(t));
    }
    return blob;
}

}  // namespace sspnet
