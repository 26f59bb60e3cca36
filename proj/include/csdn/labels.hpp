#pragma once

#include <cstdint>
#include <vector>

namespace csdn {

/// Per-pixel class indices, (n, h, w) row-major.
struct LabelMap {
    std::int64_t n = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<std::uint8_t> values;

    LabelMap() = default;
    LabelMap(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::uint8_t fill = 0)
        : n(n_), h(h_), w(w_), values(static_cast<std::size_t>(n_ * h_ * w_), fill)
    {
    }

    [[nodiscard]] std::int64_t size() const { return n * h * w; }
    [[nodiscard]] std::int64_t plane() const { return h * w; }
    std::uint8_t& operator()(std::int64_t i, std::int64_t y, std::int64_t x)
    {
        return values[static_cast<std::size_t>((i * h + y) * w + x)];
    }
    [[nodiscard]] std::uint8_t operator()(std::int64_t i, std::int64_t y, std::int64_t x) const
    {
        return values[static_cast<std::size_t>((i * h + y) * w + x)];
    }

    friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

} // namespace csdn
