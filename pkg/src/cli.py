#!/usr/bin/env python3
"""
列車オドメトリ推定のコマンドラインインターフェース
このモジュールは、シナリオ生成、フィルタ実行、モード比較、SCAデモ、プロット出力のサブコマンドを提供します。

終了コード:
    0 成功 / 1 予期しないエラー / 2 引数エラー / 3 設定エラー / 4 入力データエラー / 5 数値計算エラー
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from src.errors import ConfigError, ConsensusLogicError, InvalidInputError, NumericalError, ParseError

# ロギング設定
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger("train-odometry")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_PARSE = 4
EXIT_NUMERICAL = 5

SCA_DEMO_EXAMPLES = {
    # 1つだけ外れた観測
    "outlier": [0.0, 3.0, 3.2, 3.1],
    # 2組に分かれた観測
    "pairs": [0.0, 0.1, 4.0, 4.1],
}


def _add_scenario_source(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", type=str, help="シナリオ設定ファイル (YAML)")
    source.add_argument("--preset", type=str, help="組み込みシナリオ名 (two_slip, calibration など)")


def setup_simulate_parser(subparsers):
    """シナリオ生成の引数パーサーを設定"""
    parser = subparsers.add_parser("simulate", help="シナリオから観測CSVと真値CSVを生成")
    _add_scenario_source(parser)
    parser.add_argument("--output", type=str, required=True, help="出力ディレクトリ")
    parser.add_argument("--seed", type=int, default=None, help="乱数シード（省略時はシナリオの値）")
    return parser


def setup_run_parser(subparsers):
    """フィルタ実行の引数パーサーを設定"""
    parser = subparsers.add_parser("run", help="観測CSVにフィルタを適用して推定CSVを出力")
    parser.add_argument("--config", type=str, default=None, help="実行設定ファイル (YAML)")
    parser.add_argument("--input", type=str, required=True, help="観測CSV")
    parser.add_argument("--output", type=str, required=True, help="出力ディレクトリ")
    parser.add_argument("--mode", type=str, default=None, help="前処理モード (none | nis:<t> | sca:<p>)")
    parser.add_argument("--allow-unsorted", action="store_true", help="時刻順でない観測を並べ替える")
    parser.add_argument("--truth", type=str, default=None, help="真値CSV（指定すると評価指標を出力）")
    parser.add_argument("--plots", action="store_true", help="プロットも出力する")
    return parser


def setup_compare_parser(subparsers):
    """モード比較の引数パーサーを設定"""
    parser = subparsers.add_parser("compare", help="1つのシナリオで複数の前処理モードを比較")
    _add_scenario_source(parser)
    parser.add_argument("--run-config", type=str, default=None, help="モード以外の実行設定ファイル (YAML)")
    parser.add_argument(
        "--modes",
        type=str,
        default="none,nis:3,sca:0.5,sca:0.9",
        help="比較するモード（カンマ区切り）",
    )
    parser.add_argument("--output", type=str, required=True, help="出力ディレクトリ")
    parser.add_argument("--seed", type=int, default=None, help="乱数シード（省略時はシナリオの値）")
    parser.add_argument("--jobs", type=int, default=1, help="並列実行するプロセス数")
    parser.add_argument("--no-plots", action="store_true", help="プロットを出力しない")
    return parser


def setup_sca_demo_parser(subparsers):
    """SCAデモの引数パーサーを設定"""
    parser = subparsers.add_parser("sca-demo", help="観測集合にSCAを適用して前後比較を描画")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--input", type=str, help="観測CSV（全行を1つの集合として扱う）")
    source.add_argument(
        "--example", type=str, choices=sorted(SCA_DEMO_EXAMPLES), default="outlier", help="組み込みの観測集合"
    )
    parser.add_argument("--p", type=float, default=0.2, help="合意確率")
    parser.add_argument("--output", type=str, required=True, help="出力ディレクトリ")
    return parser


def setup_plot_parser(subparsers):
    """プロット出力の引数パーサーを設定"""
    parser = subparsers.add_parser("plot", help="推定CSVからプロットを出力")
    parser.add_argument("--input", type=str, required=True, help="推定CSV")
    parser.add_argument("--truth", type=str, default=None, help="真値CSV")
    parser.add_argument("--measurements", type=str, default=None, help="観測CSV")
    parser.add_argument("--output", type=str, required=True, help="出力ディレクトリ")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="train-odometry",
        description="Train odometry EKF with sensor consensus analysis",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "--verbose",
        "-v",
        action="count",
        default=0,
        help="詳細ログを表示する",
    )
    subparsers = parser.add_subparsers(dest="command", help="実行するコマンド")

    # サブコマンドパーサーの設定
    setup_simulate_parser(subparsers)
    setup_run_parser(subparsers)
    setup_compare_parser(subparsers)
    setup_sca_demo_parser(subparsers)
    setup_plot_parser(subparsers)
    return parser


def _check_seed(seed: Optional[int]) -> None:
    if seed is not None and not 0 <= seed < 2**64:
        raise ConfigError(f"シードは0以上2^64未満である必要があります: {seed}")


def _load_scenario_source(parsed_args):
    from src.data.config import load_scenario
    from src.simulation.presets import get_preset

    if parsed_args.config:
        return load_scenario(parsed_args.config)
    try:
        return get_preset(parsed_args.preset)
    except InvalidInputError as e:
        raise ConfigError(str(e)) from e


def cmd_simulate(parsed_args) -> int:
    from src.data.csv_io import write_measurements, write_truth
    from src.simulation.scenario import simulate_scenario

    _check_seed(parsed_args.seed)
    scenario = _load_scenario_source(parsed_args)
    truth, measurements = simulate_scenario(scenario, parsed_args.seed)
    os.makedirs(parsed_args.output, exist_ok=True)
    write_measurements(os.path.join(parsed_args.output, "measurements.csv"), measurements)
    write_truth(os.path.join(parsed_args.output, "truth.csv"), truth)
    return EXIT_OK


def cmd_run(parsed_args) -> int:
    from src.data.config import load_run_config, parse_mode
    from src.estimation.pipeline import ESTIMATES_FILE, run_pipeline
    from src.visualization.plots import render_plots

    config = load_run_config(parsed_args.config)
    if parsed_args.mode is not None:
        parse_mode(parsed_args.mode)
        config = config.with_overrides(mode=parsed_args.mode)

    summary = run_pipeline(
        config,
        parsed_args.input,
        parsed_args.output,
        allow_unsorted=parsed_args.allow_unsorted,
        truth_path=parsed_args.truth,
    )
    if parsed_args.plots and summary.output_rows > 0:
        render_plots(
            os.path.join(parsed_args.output, ESTIMATES_FILE),
            parsed_args.truth,
            os.path.join(parsed_args.output, "plots"),
            measurements_path=parsed_args.input,
        )
    print(summary.model_dump_json(indent=2))
    return EXIT_OK


def cmd_compare(parsed_args) -> int:
    from src.data.config import load_run_config, parse_mode
    from src.estimation.pipeline import compare

    _check_seed(parsed_args.seed)
    if parsed_args.jobs < 1:
        raise ConfigError(f"--jobs は1以上である必要があります: {parsed_args.jobs}")
    modes = [m.strip() for m in parsed_args.modes.split(",") if m.strip()]
    if not modes:
        raise ConfigError("--modes が空です")
    for mode in modes:
        parse_mode(mode)
    scenario = _load_scenario_source(parsed_args)
    config = load_run_config(parsed_args.run_config)

    table = compare(
        scenario,
        config,
        parsed_args.output,
        modes=modes,
        seed=parsed_args.seed,
        jobs=parsed_args.jobs,
        plots=not parsed_args.no_plots,
    )
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_sca_demo(parsed_args) -> int:
    from src.consensus.sca import desired_z, sca
    from src.data.csv_io import read_measurements
    from src.errors import DomainError
    from src.estimation.sensors import Measurement, SensorKind
    from src.visualization.plots import render_consensus_demo

    try:
        desired_z(parsed_args.p)
    except DomainError as e:
        raise ConfigError(str(e)) from e

    if parsed_args.input:
        measurements = read_measurements(parsed_args.input, allow_unsorted=True)
    else:
        sensors = [SensorKind.RADAR1, SensorKind.RADAR2, SensorKind.ENCODER1, SensorKind.ENCODER2]
        measurements = [
            Measurement(sensor=s, mean=mean, variance=1.0, timestamp=0.0)
            for s, mean in zip(sensors, SCA_DEMO_EXAMPLES[parsed_args.example])
        ]
    if not measurements:
        raise InvalidInputError("観測が空です")

    report = sca(measurements, parsed_args.p)
    path = render_consensus_demo(report, os.path.join(parsed_args.output, "consensus.svg"))
    for m, scale in zip(report.measurements, report.scales):
        print(f"{m.sensor.value:9s} mean={m.mean:.4f} variance={m.variance:.4g} scale={scale:.6g}")
    print(f"iterations={report.iterations} plot={path}")
    return EXIT_OK


def cmd_plot(parsed_args) -> int:
    from src.visualization.plots import render_plots

    render_plots(parsed_args.input, parsed_args.truth, parsed_args.output, measurements_path=parsed_args.measurements)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "run": cmd_run,
    "compare": cmd_compare,
    "sca-demo": cmd_sca_demo,
    "plot": cmd_plot,
}


def main(args: Optional[List[str]] = None) -> int:
    """メインエントリポイント"""
    parser = build_parser()
    try:
        parsed_args = parser.parse_args(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    # コマンドが指定されていない場合はヘルプを表示
    if not parsed_args.command:
        parser.print_help()
        return EXIT_USAGE

    # ログレベルの設定
    if parsed_args.verbose >= 1:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        return COMMANDS[parsed_args.command](parsed_args)
    except ConfigError as e:
        logger.error(f"設定エラー: {e}")
        return EXIT_CONFIG
    except (ParseError, InvalidInputError) as e:
        logger.error(f"入力データエラー: {e}")
        return EXIT_PARSE
    except (NumericalError, ConsensusLogicError) as e:
        logger.error(f"数値計算エラー: {e}")
        return EXIT_NUMERICAL
    except Exception as e:
        logger.error(f"コマンド実行中にエラーが発生しました: {e}", exc_info=True)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
