#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "kdtl/beamline.hpp"
#include "kdtl/error.hpp"
#include "kdtl/units.hpp"
#include "kdtl/velocity.hpp"

namespace kdtl::io {

inline constexpr std::string_view scan_csv_header = "position_nm,counts,voltage_V,is_reference,seed";
inline constexpr std::string_view vdist_csv_header = "velocity_m_per_s,weight";

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc{}) throw IoError("format_double: conversion failed");
    return {buf, end};
}

/// Nanometre text for a position in metres. Prefers the shortest decimal
/// that reads back to exactly `x_m`; scaling by 1e-9 does not reach every
/// double, so a position with no exact preimage is written at its nearest
/// nanometre value and is stable from the first read on.
inline std::string format_position_nm(double x_m) {
    const double nm = units::m_to_nm(x_m);
    std::vector<double> candidates{nm};
    double lo = nm, hi = nm;
    for (int i = 0; i < 4; ++i) {
        lo = std::nextafter(lo, -HUGE_VAL);
        hi = std::nextafter(hi, HUGE_VAL);
        candidates.push_back(lo);
        candidates.push_back(hi);
    }
    char buf[64];
    for (int decimals = 0; decimals <= 20; ++decimals) {
        for (double c : candidates) {
            const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, c, std::chars_format::fixed, decimals);
            if (ec != std::errc{}) continue;
            double back = 0.0;
            std::from_chars(buf, end, back);
            if (units::nm_to_m(back) == x_m) return {buf, end};
        }
    }
    return format_double(nm);
}

/// Integer-valued counts print without a fraction; noiseless expectations
/// keep full precision.
inline std::string format_count(double c) {
    if (c == std::floor(c) && std::abs(c) < 9.0e15) return std::to_string(static_cast<long long>(c));
    return format_double(c);
}

namespace detail {

inline double parse_double(std::string_view s, const std::string& where) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ValidationError(where + ": bad number '" + std::string(s) + "'");
    return out;
}

inline std::uint64_t parse_u64(std::string_view s, const std::string& where) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ValidationError(where + ": bad integer '" + std::string(s) + "'");
    return out;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

} // namespace detail

inline std::string scan_to_csv(const FringeScan& scan) {
    std::string out(scan_csv_header);
    out += '\n';
    const std::string voltage = format_double(scan.voltage);
    const std::string ref = scan.is_reference ? "1" : "0";
    const std::string seed = std::to_string(scan.seed);
    for (std::size_t i = 0; i < scan.positions.size(); ++i) {
        out += format_position_nm(scan.positions[i]);
        out += ',';
        out += format_count(scan.counts[i]);
        out += ',';
        out += voltage;
        out += ',';
        out += ref;
        out += ',';
        out += seed;
        out += '\n';
    }
    return out;
}

inline FringeScan scan_from_csv(const std::string& text, const std::string& where = "scan") {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != scan_csv_header)
        throw ValidationError(where + ": expected header '" + std::string(scan_csv_header) + "'");
    FringeScan scan;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cols = detail::split(line, ',');
        const std::string at = where + ":" + std::to_string(row);
        if (cols.size() != 5) throw ValidationError(at + ": expected 5 columns");
        scan.positions.push_back(units::nm_to_m(detail::parse_double(cols[0], at)));
        scan.counts.push_back(detail::parse_double(cols[1], at));
        const double voltage = detail::parse_double(cols[2], at);
        const bool is_ref = cols[3] == "1";
        if (!is_ref && cols[3] != "0") throw ValidationError(at + ": is_reference must be 0 or 1");
        const std::uint64_t seed = detail::parse_u64(cols[4], at);
        if (scan.positions.size() == 1) {
            scan.voltage = voltage;
            scan.is_reference = is_ref;
            scan.seed = seed;
        } else if (voltage != scan.voltage || is_ref != scan.is_reference || seed != scan.seed) {
            throw ValidationError(at + ": voltage, is_reference and seed must be constant within a scan");
        }
    }
    if (scan.positions.empty()) throw ValidationError(where + ": no data rows");
    scan.validate();
    return scan;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline FringeScan read_scan_csv(const std::string& path) { return scan_from_csv(read_text_file(path), path); }

/// Histogram velocity distribution from `velocity_m_per_s,weight` rows.
inline VelocityDistribution read_vdist_csv(const std::string& path) {
    const auto lines = detail::read_lines(path);
    if (lines.empty() || lines.front() != vdist_csv_header)
        throw ValidationError(path + ": expected header '" + std::string(vdist_csv_header) + "'");
    std::vector<VelocityBin> bins;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cols = detail::split(lines[i], ',');
        const std::string at = path + ":" + std::to_string(i + 1);
        if (cols.size() != 2) throw ValidationError(at + ": expected 2 columns");
        bins.push_back({detail::parse_double(cols[0], at), detail::parse_double(cols[1], at)});
    }
    return VelocityDistribution::histogram(std::move(bins));
}

} // namespace kdtl::io
