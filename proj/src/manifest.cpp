#include "recrl/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include <json.hpp>

namespace recrl {

std::string file_digest_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file for digest: " + path);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
    return hex;
}

std::string iso8601_utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm_utc;
    gmtime_r(&tt, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void RunManifest::add_input(const std::string& path) {
    input_digests[path] = file_digest_hex(path);
}

void RunManifest::save(const std::string& path) const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["inputs"] = input_digests;
    j["outputs"] = outputs;
    j["created_at"] = created_at.empty() ? iso8601_utc_now() : created_at;
    j["tool"] = tool;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << j.dump(2) << '\n';
}

RunManifest RunManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    nlohmann::json j;
    in >> j;
    RunManifest m;
    m.command = j.value("command", "");
    if (j.contains("config")) {
        m.config = j.at("config").get<std::map<std::string, std::string>>();
    }
    m.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("inputs")) {
        m.input_digests = j.at("inputs").get<std::map<std::string, std::string>>();
    }
    if (j.contains("outputs")) {
        m.outputs = j.at("outputs").get<std::vector<std::string>>();
    }
    m.created_at = j.value("created_at", "");
    m.tool = j.value("tool", "recrl");
    return m;
}

}  // namespace recrl
