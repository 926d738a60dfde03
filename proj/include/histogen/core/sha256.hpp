#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace histogen {

// Incremental SHA-256. Used for cache keys, checkpoint content hashes and
// artifact fingerprints; not security critical here, just stable.
class Sha256 {
public:
    Sha256() { reset(); }

    void reset();
    void update(const void* data, std::size_t len);
    void update(std::string_view s) { update(s.data(), s.size()); }

    // Finalizes a copy; the accumulator stays usable.
    std::string hex_digest() const;

    static std::string hex(std::string_view data) {
        Sha256 h;
        h.update(data);
        return h.hex_digest();
    }

private:
    void process_block(const std::uint8_t* p);

    std::uint32_t state_[8];
    std::uint64_t total_len_;
    std::uint8_t buffer_[64];
    std::size_t buffer_len_;
};

std::string sha256_file(const std::string& path);

}  // namespace histogen
