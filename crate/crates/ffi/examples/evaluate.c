/* Minimal C consumer: build a config, run the full pipeline on the
 * built-in demo fleet, print E and MPG.
 *
 * Build (from the workspace root, after `cargo build --release -p dpe-ffi`):
 *
 *   cc crates/ffi/examples/evaluate.c \
 *      -Icrates/ffi/include \
 *      target/release/libdpe_ffi.a \
 *      -lpthread -ldl -lm -o evaluate
 *
 * Run: ./evaluate <work-dir> <eval-vehicle>
 */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "dpe.h"

#define CHECK(call)                                                      \
    do {                                                                 \
        DpeStatus s = (call);                                            \
        if (s != DPE_STATUS_OK) {                                        \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s,             \
                    dpe_last_error());                                   \
            dpe_config_free(config);                                     \
            return 1;                                                    \
        }                                                                \
    } while (0)

int main(int argc, char **argv)
{
    if (argc != 3) {
        fprintf(stderr, "usage: %s <work-dir> <eval-vehicle>\n", argv[0]);
        return 2;
    }
    const char *work = argv[1];
    const char *eval_vehicle = argv[2];

    char json[512];
    /* The demo fleet's vehicles log ~990 s each, so lower the fleet
     * query's default one-hour minimum. */
    snprintf(json, sizeof json,
             "{\"store_dir\": \"%s/store\", \"seed\": 1, \"k\": 10,"
             " \"fleet_query\": {\"min_total_duration_s\": 600.0},"
             " \"hsmm\": {\"l\": 12, \"d_max\": 80, \"sweeps\": 200}}",
             work);

    DpeConfig *config = NULL;
    if (dpe_config_from_json(json, &config) != DPE_STATUS_OK) {
        fprintf(stderr, "config: %s\n", dpe_last_error());
        return 1;
    }

    char input[512];
    snprintf(input, sizeof input, "%s/input", work);

    size_t n_vehicles = 0;
    CHECK(dpe_simulate(config, input, &n_vehicles));
    printf("simulated %zu vehicles\n", n_vehicles);

    CHECK(dpe_ingest(config, input, false));
    CHECK(dpe_segment(config, false));
    CHECK(dpe_cluster(config, eval_vehicle, false));
    CHECK(dpe_couple(config, eval_vehicle, false));

    double e = NAN, mpg = NAN;
    CHECK(dpe_evaluate(config, eval_vehicle, DPE_CHANNEL_FUEL, false, &e, &mpg));
    printf("%s: E = %.6f gal/mi, MPG = %.4f\n", eval_vehicle, e, mpg);

    char *report_dir = NULL;
    CHECK(dpe_report(config, eval_vehicle, false, &report_dir));
    printf("report written to %s\n", report_dir);
    dpe_string_free(report_dir);

    dpe_config_free(config);
    return 0;
}
