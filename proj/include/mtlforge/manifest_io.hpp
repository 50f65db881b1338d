#pragma once

#include "mtlforge/schemes.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

namespace mtlforge {

// Batch stream wire format, one JSON object per line:
//
//   {"protocol":"mtlforge-batches","version":1,"manifest_digest":"...",
//    "total_batches":N,"batch_size":B}                          (header, once)
//   {"stage":1,"task":"squad","homogeneous":true,
//    "examples":[{"input":"...","target":"...","task":"squad"}]} (per batch)
//
// "task" is null for heterogeneous batches. This is what external trainers
// read.
inline constexpr std::string_view kBatchProtocol = "mtlforge-batches";
inline constexpr int kBatchProtocolVersion = 1;

struct StreamHeader {
    std::string manifest_digest;
    std::int64_t total_batches = 0;
    std::int64_t batch_size = 0;
    bool operator==(const StreamHeader&) const = default;
};

std::string to_wire(const StreamHeader& header);
std::string to_wire(const Batch& batch);
/// Throws with the offending reason; callers add line context.
StreamHeader parse_stream_header(std::string_view line);
Batch parse_batch_line(std::string_view line);

/// Writes the header and every batch; returns the batch count.
std::int64_t write_batch_stream(std::ostream& out, BatchStream& stream);

void write_manifest(const std::filesystem::path& path, const ScheduleManifest& manifest);
ScheduleManifest read_manifest(const std::filesystem::path& path);

} // namespace mtlforge
