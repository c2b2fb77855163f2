import pytest

from cli import build_parser, main, overrides_from


class TestParser:
    def test_projection_flags_become_overrides(self):
        args = build_parser().parse_args([
            "extract-embeddings", "--source", "activation", "--proj-dim", "256", "--density", "0.01",
            "--normalized-projection", "--pca-dim", "32", "--seed", "4", "--run-dir", "runs/x",
        ])
        assert args.source == "activation" and args.f64_check is False
        assert overrides_from(args) == {
            "run.dir": "runs/x", "seeds.master": 4, "projection.dim": 256, "projection.density": 0.01,
            "projection.normalized": True, "pca.dim": 32,
        }

    def test_evaluate_lists(self):
        args = build_parser().parse_args(["evaluate", "--sources", "fisher,pixel", "--alpha-list", "0,0.25,0.5",
                                          "--n", "100"])
        values = overrides_from(args)
        assert values["run.sources"] == ["fisher", "pixel"]
        assert values["eval.alphas"] == [0.0, 0.25, 0.5]
        assert values["eval.n"] == 100

    def test_unset_flags_are_left_out(self):
        assert overrides_from(build_parser().parse_args(["train-ar"])) == {}

    def test_sweep_lists(self):
        args = build_parser().parse_args(["sweep-projection", "--dims", "16,64", "--densities", "0.1,1"])
        assert args.dims == [16, 64] and args.densities == [0.1, 1.0]

    @pytest.mark.parametrize("argv", [["evaluate", "--alpha-list", "0,half"], ["extract-embeddings", "--source", "x"],
                                      []])
    def test_rejects_bad_arguments(self, argv):
        with pytest.raises(SystemExit):
            build_parser().parse_args(argv)


class TestMain:
    def test_missing_artifact_names_the_command(self, tmp_path, capsys):
        assert main(["report", "--run-dir", str(tmp_path / "run")]) == 2
        assert "fseb evaluate" in capsys.readouterr().err

    def test_config_errors_are_reported(self, tmp_path, capsys):
        assert main(["report", "--config", str(tmp_path / "absent.env")]) == 2
        assert "absent.env" in capsys.readouterr().err

    def test_stage_runs_from_config_file(self, fake_mnist, tmp_path, capsys):
        config = tmp_path / "tiny.env"
        config.write_text(
            f"data.mnist_dir={fake_mnist}\ndata.downsample=7\npixel_model.n_layers=2\npixel_model.kernel_size=3\n"
            "pixel_model.filters=4\ntrain.epochs=1\n"
        )
        assert main(["train-ar", "--config", str(config), "--run-dir", str(tmp_path / "run")]) == 0
        assert (tmp_path / "run" / "pixel_model.ckpt").exists()
        assert "Test NLL" in capsys.readouterr().out
