#include "support/fixtures.hpp"

#include <atomic>
#include <fstream>

#include "lcm/ids.hpp"

namespace lcm::test {

namespace fs = std::filesystem;

TempDir::TempDir() {
    dir = fs::temp_directory_path() / ("lcm_test_" + generate_id("tmp"));
    fs::create_directories(dir);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(dir, ec);
}

std::string TempDir::file(const std::string& name) const {
    return (dir / name).string();
}

std::string TempDir::write(const std::string& name, const std::string& content) const {
    fs::path target = dir / name;
    fs::create_directories(target.parent_path());
    std::ofstream out(target, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.close();
    return target.string();
}

EngineFixture::EngineFixture(const std::string& rules_jsonl, EngineConfig config) {
    provider = std::make_shared<ScriptedProvider>(
        ScriptedProvider::parse_rules(rules_jsonl));
    if (config.gateway.blob_dir.empty()) config.gateway.blob_dir = tmp.file("blobs");
    engine = std::make_unique<Engine>(std::move(config),
                                      ProviderSlots::single(provider));
    root = engine->create_root_session();
}

std::string filler_tokens(std::int64_t tokens, const std::string& seed) {
    std::string unit = seed + " ";
    std::string out;
    out.reserve(static_cast<size_t>(tokens) * 4 + unit.size());
    while (static_cast<std::int64_t>(out.size()) < tokens * 4) out += unit;
    out.resize(static_cast<size_t>(tokens) * 4);
    return out;
}

}  // namespace lcm::test
