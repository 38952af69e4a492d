#include "lcm/ids.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <random>

namespace lcm {

namespace {

constexpr char kCrockford[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";

uint64_t now_ms() {
    return static_cast<uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count());
}

// 80 random bits, reseeded once per process. The low bits act as a
// monotonic counter when several ids land in the same millisecond, which
// keeps ids sortable within a process.
struct UlidState {
    std::mutex mu;
    uint64_t last_ms = 0;
    uint64_t hi = 0;   // top 16 of the 80 random bits
    uint64_t lo = 0;   // bottom 64
    std::mt19937_64 rng{std::random_device{}()};
};

UlidState& state() {
    static UlidState s;
    return s;
}

}  // namespace

std::string generate_id(std::string_view kind) {
    UlidState& s = state();
    uint64_t ts;
    uint64_t hi, lo;
    {
        std::lock_guard<std::mutex> lock(s.mu);
        ts = now_ms();
        if (ts == s.last_ms) {
            if (++s.lo == 0) ++s.hi;
        } else {
            s.last_ms = ts;
            s.hi = s.rng() & 0xFFFF;
            s.lo = s.rng();
        }
        hi = s.hi;
        lo = s.lo;
    }

    // 48-bit timestamp, 10 chars; 80 random bits, 16 chars.
    char out[26];
    uint64_t t = ts & 0xFFFFFFFFFFFFULL;
    for (int i = 9; i >= 0; --i) {
        out[i] = kCrockford[t & 0x1F];
        t >>= 5;
    }
    // Emit the 80 bits (hi:16, lo:64) as 16 base32 chars, MSB first.
    unsigned __int128 rand80 = (static_cast<unsigned __int128>(hi) << 64) | lo;
    for (int i = 25; i >= 10; --i) {
        out[i] = kCrockford[static_cast<unsigned>(rand80 & 0x1F)];
        rand80 >>= 5;
    }

    std::string id;
    id.reserve(kind.size() + 1 + 26);
    id.append(kind);
    id.push_back('_');
    id.append(out, 26);
    return id;
}

std::string_view id_kind_of(std::string_view id) {
    auto pos = id.find('_');
    if (pos == std::string_view::npos) return {};
    return id.substr(0, pos);
}

}  // namespace lcm
