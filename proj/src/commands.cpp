#include "turncal/commands.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <set>

#include "turncal/estimators.hpp"
#include "turncal/experiments.hpp"
#include "turncal/hinter_guesser.hpp"
#include "turncal/http_backend.hpp"
#include "turncal/report.hpp"
#include "turncal/util.hpp"

namespace turncal {

namespace {

using json = nlohmann::ordered_json;

struct Pipeline {
  std::shared_ptr<ChatBackend> backend;
  std::unique_ptr<Gateway> gateway;
  PromptTemplates templates;
  PlaceboPools pools;
};

Pipeline open_pipeline(const RunConfig& config, bool need_pools) {
  Pipeline p;
  p.backend = std::shared_ptr<ChatBackend>(make_backend(config));
  p.gateway = make_gateway(config, p.backend);
  p.templates = load_templates(config.assets_dir);
  if (need_pools) p.pools = load_placebo_pools(config.assets_dir);
  return p;
}

// Spend nothing against a dead endpoint.
void check_reachable(const RunConfig& config, const Pipeline& p) {
  if (config.backend.kind != "http") return;
  auto* http = dynamic_cast<HttpBackend*>(p.backend.get());
  std::string why;
  if (http && !http->reachable(&why))
    throw std::runtime_error("backend unreachable: " + config.backend.base_url + " (" + why + ")");
}

EvalOptions eval_options(const RunConfig& config, const PlaceboPools& pools) {
  EvalOptions options;
  options.model_id = config.backend.model_id;
  options.summarizer_model_id = config.summarizer_model_id;
  options.pools = &pools;
  options.seed = config.seed;
  options.workers = config.workers;
  return options;
}

json manifest_header(const RunConfig& config, const PromptTemplates& templates) {
  json m = json::object();
  m["model_id"] = config.backend.model_id;
  m["seed"] = config.seed;
  m["bins"] = config.bins;
  m["scheme"] = to_string(config.scheme);
  json t = json::object();
  for (const auto& [name, digest] : template_digests(templates)) t[name] = digest;
  m["templates"] = std::move(t);
  json datasets = json::array();
  for (const DatasetRef& d : config.datasets)
    datasets.push_back(json{{"name", d.name}, {"sha256", sha256_hex(read_text_file(d.path))}});
  m["datasets"] = std::move(datasets);
  return m;
}

}  // namespace

std::string record_file_name(const std::string& dataset, const std::string& method, Target target,
                             Condition condition) {
  return dataset + "__" + method + "__" + to_string(target) + "__" + to_string(condition) +
         ".jsonl";
}

int cmd_generate(const RunConfig& config, std::ostream& out) {
  if (!config.generation) {
    out << "error: config has no generation section\n";
    return 2;
  }
  const GenerationConfig& gen = *config.generation;
  Pipeline p = open_pipeline(config, false);
  check_reachable(config, p);

  std::vector<std::string> entities = read_entity_list(gen.entity_file);
  if (entities.empty()) {
    out << "error: entity list is empty: " << gen.entity_file.string() << "\n";
    return 2;
  }

  std::vector<GenerationJob> jobs;
  for (size_t n = 0; n < entities.size(); ++n) {
    GenerationJob job;
    job.secret_entity = entities[n];
    job.task_kind = gen.task_kind;
    job.max_turns = gen.max_turns;
    job.hinter_model = gen.hinter_model;
    job.guesser_model = gen.guesser_model;
    job.seed = gen.seed + n * 1000;
    jobs.push_back(std::move(job));
  }

  GenerationOptions options;
  options.workers = config.workers;
  GenerationResult result = run_generation(*p.gateway, p.templates, jobs, options);

  std::filesystem::create_directories(config.output_dir);
  std::filesystem::path dataset_path = config.output_dir / (gen.output_name + ".jsonl");
  std::filesystem::path reject_path = config.output_dir / (gen.output_name + ".rejected.jsonl");
  write_dataset(dataset_path, result.dialogues);
  write_rejection_log(reject_path, result.rejected);

  CorpusStats stats = corpus_stats(result.dialogues);
  json stats_json = json::object();
  stats_json["dialogue_count"] = stats.dialogue_count;
  stats_json["turn_count"] = stats.turn_count;
  stats_json["entity_count"] = stats.entity_count;
  json histogram = json::object();
  for (const auto& [length, count] : stats.length_histogram)
    histogram[std::to_string(length)] = count;
  stats_json["length_histogram"] = std::move(histogram);
  write_text_file_atomic(config.output_dir / (gen.output_name + ".stats.json"),
                         stats_json.dump(2) + "\n");

  out << "kept " << stats.dialogue_count << " dialogue(s), " << stats.turn_count << " turn(s), "
      << stats.entity_count << " entit(ies); rejected " << result.rejected.size() << "\n";
  for (const RejectedJob& r : result.rejected)
    out << "  rejected '" << r.job.secret_entity << "': " << to_string(r.reason) << "\n";
  out << "wrote " << dataset_path.string() << "\n";
  return result.dialogues.empty() ? 1 : 0;
}

int cmd_eval(const RunConfig& config, std::ostream& out) {
  if (config.methods.empty()) {
    out << "error: config lists no methods\n";
    return 2;
  }
  if (config.datasets.empty()) {
    out << "error: config lists no datasets\n";
    return 2;
  }
  Pipeline p = open_pipeline(config, true);
  check_reachable(config, p);

  std::filesystem::path records_dir = config.output_dir / "records";
  std::filesystem::create_directories(records_dir);

  std::vector<RecordSet> sets;
  for (const DatasetRef& dataset : config.datasets) {
    std::vector<Dialogue> dialogues = read_dataset(dataset.path);
    for (const MethodConfig& method : config.methods) {
      for (Target target : config.targets) {
        for (Condition condition : config.conditions) {
          EvalOptions options = eval_options(config, p.pools);
          std::vector<EvalRecord> records = evaluate(*p.gateway, p.templates, dialogues, method,
                                                     target, condition, options);
          std::filesystem::path file =
              records_dir / record_file_name(dataset.name, method.id(), target, condition);
          write_records(file, records);
          out << "wrote " << records.size() << " record(s) to " << file.string() << "\n";
          sets.push_back({dataset.name, std::move(records)});
        }
      }
    }
  }

  ReportBundle bundle = build_report(sets, config.bins, config.scheme);
  json manifest = manifest_header(config, p.templates);
  manifest.update(bundle.manifest);
  bundle.manifest = std::move(manifest);
  write_report(config.output_dir, bundle);
  out << render_metrics_csv(bundle);
  GatewayStats stats = p.gateway->stats();
  out << "gateway: " << stats.backend_calls << " backend call(s), " << stats.cache_hits
      << " cache hit(s)\n";
  return 0;
}

int cmd_placebo(const RunConfig& config, std::ostream& out) {
  if (config.methods.empty()) {
    out << "error: config lists no methods\n";
    return 2;
  }
  if (config.datasets.empty()) {
    out << "error: config lists no datasets\n";
    return 2;
  }
  Pipeline p = open_pipeline(config, true);
  check_reachable(config, p);
  std::filesystem::create_directories(config.output_dir);

  int failures = 0;
  for (const DatasetRef& dataset : config.datasets) {
    std::vector<Dialogue> dialogues = read_dataset(dataset.path);
    for (const MethodConfig& method : config.methods) {
      try {
        EvalOptions options = eval_options(config, p.pools);
        PlaceboReport report = placebo_experiment(*p.gateway, p.templates, dialogues, method,
                                                  options, config.significance);
        std::string csv = render_placebo_csv(report, config.backend.model_id, dataset.name,
                                             method.id());
        std::filesystem::path file =
            config.output_dir / ("placebo__" + dataset.name + "__" + method.id() + ".csv");
        write_text_file_atomic(file, csv);

        std::string triples;
        for (const PlaceboTriple& t : report.triples) {
          json row = json::object();
          row["dialogue_id"] = t.dialogue_id;
          row["turn_index"] = t.turn_index;
          row["conf_baseline"] = t.conf_baseline;
          row["conf_placebo"] = t.conf_placebo;
          row["conf_original"] = t.conf_original;
          row["correct_baseline"] = t.correct_baseline;
          row["correct_placebo"] = t.correct_placebo;
          row["correct_original"] = t.correct_original;
          triples += row.dump();
          triples += '\n';
        }
        write_text_file_atomic(config.output_dir /
                                   ("placebo__" + dataset.name + "__" + method.id() + ".jsonl"),
                               triples);
        out << csv;
      } catch (const std::exception& e) {
        out << "error: placebo on " << dataset.name << " with " << method.id() << ": " << e.what()
            << "\n";
        ++failures;
      }
    }
  }
  return failures == 0 ? 0 : 1;
}

int cmd_compare_format(const RunConfig& config, std::ostream& out) {
  if (config.methods.empty()) {
    out << "error: config lists no methods\n";
    return 2;
  }
  if (config.datasets.empty()) {
    out << "error: config lists no datasets\n";
    return 2;
  }
  Pipeline p = open_pipeline(config, true);
  check_reachable(config, p);
  std::filesystem::create_directories(config.output_dir);

  int failures = 0;
  for (const DatasetRef& dataset : config.datasets) {
    std::vector<Dialogue> dialogues = read_dataset(dataset.path);
    for (const MethodConfig& method : config.methods) {
      try {
        EvalOptions options = eval_options(config, p.pools);
        FormatComparison cmp = format_comparison(*p.gateway, p.templates, dialogues, method,
                                                 options, config.bins, config.scheme);
        std::string csv = render_compare_format_csv(cmp, config.backend.model_id, dataset.name,
                                                    method.id());
        write_text_file_atomic(config.output_dir / ("compare_format__" + dataset.name + "__" +
                                                    method.id() + ".csv"),
                               csv);
        out << csv;
      } catch (const std::exception& e) {
        out << "error: compare-format on " << dataset.name << " with " << method.id() << ": "
            << e.what() << "\n";
        ++failures;
      }
    }
  }
  return failures == 0 ? 0 : 1;
}

int cmd_report(const RunConfig& config, const std::vector<std::filesystem::path>& files,
               std::ostream& out) {
  std::vector<std::filesystem::path> inputs = files;
  if (inputs.empty()) {
    std::filesystem::path records_dir = config.output_dir / "records";
    if (std::filesystem::is_directory(records_dir)) {
      for (const auto& entry : std::filesystem::directory_iterator(records_dir)) {
        if (entry.path().extension() == ".jsonl") inputs.push_back(entry.path());
      }
    }
    std::sort(inputs.begin(), inputs.end());
  }
  if (inputs.empty()) {
    out << "error: no record files found\n";
    return 2;
  }

  std::vector<RecordSet> sets;
  for (const std::filesystem::path& file : inputs) {
    std::string stem = file.stem().string();
    std::string dataset = stem.substr(0, stem.find("__"));
    sets.push_back({dataset, read_records(file)});
  }

  ReportBundle bundle = build_report(sets, config.bins, config.scheme);
  write_report(config.output_dir, bundle);
  out << render_metrics_csv(bundle);
  return 0;
}

}  // namespace turncal
