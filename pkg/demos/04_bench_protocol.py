"""Benchmark arithmetic: bottleneck scoring, nested means and the two reference tables."""
from v2v.bench import aggregate, fixture_records, mini_bench, reference_tables
from v2v.judge import score_samples
from v2v.pages import render_page

if __name__ == "__main__":
    for name, table in reference_tables().items():
        report = aggregate(fixture_records(table["final"], quality_means=table["quality"]))
        print(f"{name}: 616 records")
        print(report.to_table(), "\n")

    spec = mini_bench()
    items = [(p, k, render_page(p.page)) for p in spec.prompts for k in range(spec.samples_per_prompt)]
    print("stub judge scoring the prompt pages themselves (white page backgrounds dominate the inline-color check):")
    print(aggregate(score_samples(items, "stub"), spec).to_table())
