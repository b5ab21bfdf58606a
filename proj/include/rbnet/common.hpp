#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rbnet {

// ---------------------------------------------------------------------------
// Error hierarchy. CLI maps ConfigError/UsageError to exit code 2 and
// DataError to exit code 3.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct UsageError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct MetricError : Error {
    using Error::Error;
};
struct TrainError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// RandomStream: self-contained RNG so that every artifact of a run is a pure
// function of the seed, independent of the standard library's distribution
// implementations. splitmix64 core, explicit samplers.
// ---------------------------------------------------------------------------

class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    uint64_t uniform_index(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Poisson sample; exact (Knuth) below lambda=30, Gaussian approximation
    // above, where the relative error is negligible for imaging noise.
    int64_t poisson(double lambda) {
        if (lambda <= 0.0) return 0;
        if (lambda < 30.0) {
            double l = std::exp(-lambda);
            int64_t k = 0;
            double p = 1.0;
            do {
                ++k;
                p *= uniform();
            } while (p > l);
            return k - 1;
        }
        double v = lambda + std::sqrt(lambda) * normal();
        return v < 0.0 ? 0 : int64_t(std::llround(v));
    }

    // derive an independent stream (e.g. one per scene)
    RandomStream fork(uint64_t salt) {
        RandomStream r(state_ ^ (0x6a09e667f3bcc909ull + salt * 0x2545f4914f6cdd1dull));
        r.next_u64();
        return r;
    }

    // serialization for resumable training state
    uint64_t state() const { return state_; }
    void set_state(uint64_t s) {
        state_ = s;
        have_spare_ = false;
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Little-endian binary IO for the NDST / NDRB formats.
// ---------------------------------------------------------------------------

namespace io {

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), std::streamsize(n));
}

template <typename T>
void put_le(std::ostream& os, T v) {
    static_assert(std::is_integral_v<T>);
    unsigned char b[sizeof(T)];
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(v);
    for (size_t i = 0; i < sizeof(T); ++i) b[i] = (unsigned char)((u >> (8 * i)) & 0xff);
    put_bytes(os, b, sizeof(T));
}

inline void put_f32(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_le<uint32_t>(os, u);
}

inline void put_f32_array(std::ostream& os, const float* v, size_t n) {
    // x86 is little-endian; fall back to element-wise writes elsewhere
#if defined(__x86_64__) || defined(__i386__) || defined(_M_X64)
    put_bytes(os, v, n * 4);
#else
    for (size_t i = 0; i < n; ++i) put_f32(os, v[i]);
#endif
}

inline bool get_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), std::streamsize(n));
    return bool(is);
}

template <typename T>
bool get_le(std::istream& is, T& v) {
    unsigned char b[sizeof(T)];
    if (!get_bytes(is, b, sizeof(T))) return false;
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (size_t i = 0; i < sizeof(T); ++i) u |= U(b[i]) << (8 * i);
    v = static_cast<T>(u);
    return true;
}

inline bool get_f32(std::istream& is, float& v) {
    uint32_t u;
    if (!get_le<uint32_t>(is, u)) return false;
    std::memcpy(&v, &u, 4);
    return true;
}

inline bool get_f32_array(std::istream& is, float* v, size_t n) {
#if defined(__x86_64__) || defined(__i386__) || defined(_M_X64)
    return get_bytes(is, v, n * 4);
#else
    for (size_t i = 0; i < n; ++i)
        if (!get_f32(is, v[i])) return false;
    return true;
#endif
}

}  // namespace io

// Deterministic float formatting for CSV/report output.
inline std::string format_float(double v, int precision = 9) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    return std::string(buf);
}

}  // namespace rbnet
