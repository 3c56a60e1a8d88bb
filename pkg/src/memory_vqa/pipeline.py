"""Three-stage memory-augmented inference and whole-split runs"""

from __future__ import annotations

import json
import logging
import mimetypes
import threading
from concurrent.futures import Future, ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from tqdm import tqdm

from memory_vqa.backend_class import BackendRequest, BackendResponse, DecodingParams, ModelBackend
from memory_vqa.dataset import Sample, SampleSet
from memory_vqa.dataset_types import DatasetId, FrameKey, frame_key_str
from memory_vqa.errors import (
    ConfigError,
    FileLayoutError,
    MemoryVQAError,
    MockMissError,
    RecordError,
    RunError,
)
from memory_vqa.labels import is_binary_question
from memory_vqa.memory import HintSet, IndirectMemoryEntry, ParseFlag
from memory_vqa.prompting import (
    PromptTask,
    parse_hint_list,
    parse_indirect_memory,
    render_prompt,
)
from memory_vqa.retrieval import select_indirect_memory
from memory_vqa.vqa_params import InferenceConfig

logger = logging.getLogger(__name__)

ImageLoader = Callable[[Sample], bytes]


@dataclass
class MemoryTrace:
    """Memory the model produced for one sample"""

    dm: HintSet
    im_generated: list[IndirectMemoryEntry] = field(default_factory=list)
    im_selected: list[IndirectMemoryEntry] = field(default_factory=list)
    malformed_counts: dict[str, int] = field(default_factory=lambda: {"dm": 0, "im": 0})

    @property
    def memory(self) -> list:
        """Composite memory: selected indirect entries then the direct memory hints"""
        return [*self.im_selected, self.dm]


@dataclass
class Prediction:
    """Final answer of one sample with the memory that produced it.

    `answer_text` is the final-stage completion verbatim; it is mapped onto
    labels only when metrics are computed.
    """

    index: int
    dataset: str
    video: str
    frame: str
    question: str
    gold: str
    answer_text: str
    trace: MemoryTrace
    latency_ms: float = 0.0
    flags: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def key(self) -> tuple[str, str, str, str]:
        """Sample key the prediction belongs to"""
        return (self.dataset, self.video, self.frame, self.question)

    @property
    def dataset_id(self) -> DatasetId:
        return DatasetId.from_tag(self.dataset)

    @property
    def failed(self) -> bool:
        """True when the sample could not be answered"""
        return self.error is not None

    def to_dict(self) -> dict:
        """Prediction-file record"""
        dm = self.trace.dm
        return {
            "index": self.index,
            "dataset": self.dataset,
            "video": self.video,
            "frame": self.frame,
            "question": self.question,
            "gold": self.gold,
            "answer_text": self.answer_text,
            "dm": None if dm.is_null else list(dm.hints),
            "dm_flag": dm.flag.value,
            "im_generated": [e.to_dict() for e in self.trace.im_generated],
            "im_selected": [e.to_dict() for e in self.trace.im_selected],
            "malformed": dict(self.trace.malformed_counts),
            "flags": list(self.flags),
            "latency_ms": self.latency_ms,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Prediction":
        """Inverse of to_dict"""
        flag = ParseFlag(data.get("dm_flag", ParseFlag.OK.value))
        dm = HintSet.null() if data["dm"] is None else HintSet(tuple(data["dm"]), flag=flag)
        trace = MemoryTrace(
            dm=dm,
            im_generated=[IndirectMemoryEntry.from_dict(e) for e in data.get("im_generated", [])],
            im_selected=[IndirectMemoryEntry.from_dict(e) for e in data.get("im_selected", [])],
            malformed_counts=dict(data.get("malformed", {"dm": 0, "im": 0})),
        )
        return cls(
            index=int(data["index"]),
            dataset=data["dataset"],
            video=data["video"],
            frame=data["frame"],
            question=data["question"],
            gold=data["gold"],
            answer_text=data["answer_text"],
            trace=trace,
            latency_ms=float(data.get("latency_ms", 0.0)),
            flags=list(data.get("flags", [])),
            error=data.get("error"),
        )


def write_predictions(predictions: list[Prediction], path: str | Path) -> None:
    """Write predictions as JSONL in the given order"""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for prediction in predictions:
            f.write(json.dumps(prediction.to_dict(), ensure_ascii=False))
            f.write("\n")


def load_predictions(path: str | Path) -> list[Prediction]:
    """Read a prediction file

    Raises:
        RecordError: unparseable line
    """
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(Prediction.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as err:
                raise RecordError(f"Bad prediction record: {err}", str(path), lineno) from err
    return out


class RunTrace:
    """Thread-safe JSONL sink of every backend exchange"""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._file = open(self.path, "w", encoding="utf-8", newline="\n") if self.path else None
        self.n_calls = 0

    def record(self, request: BackendRequest, response: BackendResponse) -> None:
        """Append one exchange"""
        with self._lock:
            self.n_calls += 1
            if self._file is None:
                return
            entry = {
                "request_id": request.request_id,
                "frame": frame_key_str(request.frame) if request.frame else None,
                "task": request.task.value,
                "prompt_hash": request.prompt_hash,
                "response_text": response.text,
                "latency_ms": response.latency_ms,
                "attempts": response.attempts,
            }
            self._file.write(json.dumps(entry, ensure_ascii=False))
            self._file.write("\n")
            self._file.flush()

    def close(self) -> None:
        with self._lock:
            if self._file is not None:
                self._file.close()
                self._file = None


@dataclass(frozen=True)
class GeneratedMemory:
    """Parsed indirect memory of a frame and the cost of producing it"""

    entries: tuple[IndirectMemoryEntry, ...]
    skipped: int
    latency_ms: float


class FrameMemoryCache:
    """Indirect memory per frame, generated once.

    The first sample of a frame to ask computes it; concurrent askers for the
    same frame wait on the same future. Failures are cached too.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._futures: dict[FrameKey, Future] = {}

    def __len__(self) -> int:
        return len(self._futures)

    def get(self, frame: FrameKey, compute: Callable[[], GeneratedMemory]) -> GeneratedMemory:
        """Cached memory of a frame, computed on first request"""
        with self._lock:
            future = self._futures.get(frame)
            owner = future is None
            if owner:
                future = Future()
                self._futures[frame] = future
        if owner:
            try:
                future.set_result(compute())
            except BaseException as err:
                future.set_exception(err)
        return future.result()


def _media_type(path: str) -> str:
    media_type, _ = mimetypes.guess_type(path)
    return media_type or "image/png"


def _call(
    backend: ModelBackend,
    request_id: str,
    image: bytes,
    sample: Sample,
    prompt: str,
    params: DecodingParams,
    task: PromptTask,
    trace_sink: RunTrace | None,
) -> BackendResponse:
    request = BackendRequest(
        request_id=request_id,
        image_bytes=image,
        media_type=_media_type(sample.image_path),
        prompt=prompt,
        params=params,
        task=task,
        frame=sample.frame_key,
        question=None if task is PromptTask.INDIRECT_MEMORY else sample.question,
    )
    response = backend.complete(request)
    if trace_sink is not None:
        trace_sink.record(request, response)
    return response


def infer_sample(
    image: bytes,
    sample: Sample,
    backend: ModelBackend,
    config: InferenceConfig,
    index: int = 0,
    im_cache: FrameMemoryCache | None = None,
    trace_sink: RunTrace | None = None,
) -> Prediction:
    """Answer one question with self-generated memory.

    Stage 1 asks for direct memory hints (Cholec80 binary questions skip it
    and use [NULL]); stage 2 asks for indirect memory of the frame and keeps
    the Top-M entries most similar to the question, never the question
    itself; stage 3 answers with the memory and hints in the prompt.
    Unparseable memory degrades to empty memory and is flagged.

    Args:
        image (bytes): encoded frame
        sample (Sample): sample to answer (its gold answer is not used)
        backend (ModelBackend): model service
        config (InferenceConfig): K, M, decoding params and ablation switches
        index (int, optional): position of the sample in its split
        im_cache (FrameMemoryCache | None, optional): shared per-frame cache
        trace_sink (RunTrace | None, optional): backend exchange log

    Raises:
        RunError: a backend call failed after its retries

    Returns:
        Prediction: final answer with its memory trace
    """
    flags: list[str] = []
    latency = 0.0
    try:
        # stage 1: direct memory
        if not config.use_dm or is_binary_question(sample.question, sample.dataset_id):
            dm = HintSet.null()
        else:
            prompt = render_prompt(PromptTask.DIRECT_MEMORY, question=sample.question)
            response = _call(
                backend, f"s{index:06d}-dm", image, sample, prompt.rendered_text,
                config.dm_params, PromptTask.DIRECT_MEMORY, trace_sink,
            )
            latency += response.latency_ms
            dm = parse_hint_list(response.text)
            if len(dm) > config.k:
                dm = HintSet(dm.hints[: config.k], flag=dm.flag)
        trace = MemoryTrace(dm=dm)
        if dm.is_flagged:
            trace.malformed_counts["dm"] = 1
            flags.append(f"dm_{dm.flag.value}")

        # stage 2: indirect memory, once per frame
        if config.use_im and config.m > 0:

            def generate() -> GeneratedMemory:
                prompt = render_prompt(PromptTask.INDIRECT_MEMORY, image_ref=sample.frame_key)
                response = _call(
                    backend, f"f{frame_key_str(sample.frame_key)}-im", image, sample,
                    prompt.rendered_text, config.im_params, PromptTask.INDIRECT_MEMORY, trace_sink,
                )
                parsed = parse_indirect_memory(response.text)
                return GeneratedMemory(tuple(parsed.entries), parsed.skipped, response.latency_ms)

            generated = im_cache.get(sample.frame_key, generate) if im_cache is not None else generate()
            latency += generated.latency_ms
            trace.im_generated = list(generated.entries)
            trace.im_selected = select_indirect_memory(sample.question, generated.entries, config.m)
            if generated.skipped:
                trace.malformed_counts["im"] = generated.skipped
                flags.append("im_malformed_lines")

        # stage 3: memory-augmented answer
        prompt = render_prompt(
            PromptTask.MEMORY_VQA,
            question=sample.question,
            memory=trace.im_selected,
            hints=trace.dm,
            image_ref=sample.frame_key,
        )
        response = _call(
            backend, f"s{index:06d}-mvqa", image, sample, prompt.rendered_text,
            config.answer_params, PromptTask.MEMORY_VQA, trace_sink,
        )
        latency += response.latency_ms
    except (RunError, MockMissError) as err:
        raise RunError(f"Sample {index} ({frame_key_str(sample.frame_key)}): {err}") from err

    return Prediction(
        index=index,
        dataset=sample.dataset_id.value,
        video=sample.video_id,
        frame=sample.frame_id,
        question=sample.question,
        gold=sample.answer,
        answer_text=response.text,
        trace=trace,
        latency_ms=latency,
        flags=flags,
    )


def failed_prediction(sample: Sample, index: int, message: str) -> Prediction:
    """Placeholder for a sample whose inference failed"""
    return Prediction(
        index=index,
        dataset=sample.dataset_id.value,
        video=sample.video_id,
        frame=sample.frame_id,
        question=sample.question,
        gold=sample.answer,
        answer_text="",
        trace=MemoryTrace(dm=HintSet(flag=ParseFlag.MALFORMED)),
        flags=["error"],
        error=message,
    )


def file_image_loader(root: str | Path) -> ImageLoader:
    """Image loader reading `image_path` relative to a dataset root

    Raises:
        FileLayoutError: image file missing (raised when loading)
    """
    root = Path(root)

    def load(sample: Sample) -> bytes:
        path = root / sample.image_path
        if not path.is_file():
            raise FileLayoutError(f"Missing image {path}")
        return path.read_bytes()

    return load


@dataclass
class RunResult:
    """Predictions of a split in input order"""

    predictions: list[Prediction]
    n_resumed: int = 0

    @property
    def n_failed(self) -> int:
        return sum(p.failed for p in self.predictions)

    @property
    def failure_ratio(self) -> float:
        return self.n_failed / len(self.predictions) if self.predictions else 0.0


def _read_checkpoint(path: Path, samples: SampleSet) -> dict[int, Prediction]:
    done = {}
    for prediction in load_predictions(path):
        i = prediction.index
        if 0 <= i < len(samples) and samples[i].key == prediction.key and not prediction.failed:
            done[i] = prediction
        else:
            logger.warning("Ignoring checkpoint record %d: does not match the split", i)
    return done


def run_split(
    samples: SampleSet,
    backend: ModelBackend,
    config: InferenceConfig,
    image_loader: ImageLoader,
    parallelism: int = 1,
    predictions_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    resume: bool = False,
    failure_threshold: float = 1.0,
    trace_sink: RunTrace | None = None,
    progress: bool = True,
) -> RunResult:
    """Answer every sample of a split.

    At most `parallelism` samples (hence backend calls) are in flight.
    Indirect memory is generated once per frame. Completed predictions are
    appended to the checkpoint as they finish; with `resume` they are read
    back and skipped. Output order is input order. Any other library error of
    a sample, a missing image included, fails that sample only.

    Args:
        samples (SampleSet): split to answer
        backend (ModelBackend): model service
        config (InferenceConfig): inference settings
        image_loader (ImageLoader): sample -> encoded frame
        parallelism (int, optional): worker threads. Defaults to 1.
        predictions_path (str | Path | None, optional): final prediction file
        checkpoint_path (str | Path | None, optional): append-only checkpoint
        resume (bool, optional): replay the checkpoint. Defaults to False.
        failure_threshold (float, optional): largest tolerated share of
            failed samples. Defaults to 1.0.
        trace_sink (RunTrace | None, optional): backend exchange log
        progress (bool, optional): show a progress bar. Defaults to True.

    Raises:
        ConfigError: invalid parallelism, or the backend rejected a request
        RunError: failure ratio above the threshold (outputs are still written)

    Returns:
        RunResult: predictions in input order
    """
    if parallelism < 1:
        raise ConfigError(f"parallelism must be >= 1, got {parallelism}")

    done: dict[int, Prediction] = {}
    checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
    if resume and checkpoint_path and checkpoint_path.is_file():
        done = _read_checkpoint(checkpoint_path, samples)
        logger.info("Resuming: %d/%d samples already answered", len(done), len(samples))
    n_resumed = len(done)
    pending = [i for i in range(len(samples)) if i not in done]

    cache = FrameMemoryCache()
    checkpoint_lock = threading.Lock()
    checkpoint = None
    if checkpoint_path:
        checkpoint = open(checkpoint_path, "a" if resume else "w", encoding="utf-8", newline="\n")

    def work(i: int) -> Prediction:
        sample = samples[i]
        try:
            prediction = infer_sample(
                image_loader(sample), sample, backend, config, index=i, im_cache=cache, trace_sink=trace_sink
            )
        except ConfigError:
            raise
        except MemoryVQAError as err:
            logger.warning("%s", err)
            return failed_prediction(sample, i, str(err))
        if checkpoint is not None:
            with checkpoint_lock:
                checkpoint.write(json.dumps(prediction.to_dict(), ensure_ascii=False) + "\n")
                checkpoint.flush()
        return prediction

    try:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(work, i) for i in pending]
            bar = tqdm(as_completed(futures), total=len(futures), disable=not progress, desc="infer")
            try:
                for future in bar:
                    prediction = future.result()
                    done[prediction.index] = prediction
            except BaseException:
                for future in futures:
                    future.cancel()
                raise
    finally:
        if checkpoint is not None:
            checkpoint.close()

    result = RunResult(predictions=[done[i] for i in range(len(samples))], n_resumed=n_resumed)
    if predictions_path:
        write_predictions(result.predictions, predictions_path)
    logger.info(
        "Answered %d samples (%d resumed, %d failed, %d frames generated)",
        len(result.predictions),
        n_resumed,
        result.n_failed,
        len(cache),
    )
    if result.failure_ratio > failure_threshold:
        raise RunError(
            f"{result.n_failed}/{len(result.predictions)} samples failed, above the "
            f"threshold {failure_threshold:.2%}"
        )
    return result
