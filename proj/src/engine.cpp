#include "lcm/engine.hpp"

#include <filesystem>

namespace lcm {

Engine::Engine(EngineConfig config, ProviderSlots providers,
               std::shared_ptr<TokenCounter> counter)
    : config_(std::move(config)), providers_(std::move(providers)) {
    counter_ = counter ? std::move(counter) : default_token_counter();

    if (config_.gateway.blob_dir.empty()) {
        // Oversized inline tool results need somewhere to live.
        config_.gateway.blob_dir =
            config_.store_path == ":memory:"
                ? (std::filesystem::temp_directory_path() / "lcm-blobs").string()
                : config_.store_path + ".blobs";
    }

    store_ = open_sqlite_store(config_.store_path, counter_);
    summarizer_ = std::make_shared<Summarizer>(config_.summarizer, counter_);
    controller_ = std::make_shared<Controller>(store_, counter_, summarizer_,
                                               providers_, config_.controller);
    gateway_ = std::make_shared<FileGateway>(store_, counter_, summarizer_,
                                             controller_, config_.gateway);
    memory_ = std::make_shared<MemoryTools>(store_, config_.memory, counter_);
    maps_ = std::make_shared<MapEngine>(store_, providers_, gateway_);
    delegation_ = std::make_shared<Delegation>(store_, config_.delegation);
    runtime_ = std::make_shared<SessionRuntime>(store_, controller_, gateway_, memory_,
                                                maps_, delegation_, providers_,
                                                config_.runtime);
    delegation_->set_turn_driver(runtime_.get());
    maps_->set_item_agent_runner(runtime_.get());
}

SessionRecord Engine::create_root_session() {
    return store_->create_session("", AgentKind::root, false);
}

}  // namespace lcm
