#pragma once

#include <map>
#include <string>
#include <vector>

#include "recrl/common.hpp"

namespace recrl {

// FNV-1a 64-bit digest of a file's bytes, as 16 hex characters.
std::string file_digest_hex(const std::string& path);

// Every run directory holds exactly one manifest.json describing what
// produced it: command, resolved config, seed, input digests, outputs.
struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> input_digests;  // path -> digest
    std::vector<std::string> outputs;
    std::string created_at;  // ISO-8601 UTC
    std::string tool = "recrl";

    void add_input(const std::string& path);
    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

std::string iso8601_utc_now();

}  // namespace recrl
