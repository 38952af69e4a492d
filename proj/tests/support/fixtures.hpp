#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "lcm/engine.hpp"

namespace lcm::test {

// Unique writable directory, removed with everything in it on destruction.
struct TempDir {
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string path() const { return dir.string(); }
    std::string file(const std::string& name) const;
    // Writes content under the dir and returns the full path.
    std::string write(const std::string& name, const std::string& content) const;

    std::filesystem::path dir;
};

// In-memory engine wired to a scripted provider, with a root session ready.
struct EngineFixture {
    explicit EngineFixture(const std::string& rules_jsonl = "",
                           EngineConfig config = {});

    TempDir tmp;
    std::shared_ptr<ScriptedProvider> provider;
    std::unique_ptr<Engine> engine;
    SessionRecord root;
};

// Deterministic filler that counts to roughly `tokens` under the default
// 4-bytes-per-token counter. Distinct seeds give distinct text.
std::string filler_tokens(std::int64_t tokens, const std::string& seed = "lorem");

}  // namespace lcm::test
