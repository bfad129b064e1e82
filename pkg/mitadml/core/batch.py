import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional

from mitadml.core.exceptions import BatchError

logger = logging.getLogger("mitadml")


class TaskBatch:
    """
    Collects independent tasks and runs them on a thread pool.

    Results are keyed by task id and reported in insertion order, so the
    outcome of a batch never depends on the number of worker threads.
    """

    def __init__(self, max_batch_size: Optional[int] = None):
        """
        Initialize a task batch.

        Args:
            max_batch_size: Maximum number of tasks in the batch (None for unbounded)
        """
        self.max_batch_size = max_batch_size
        self.tasks: List[Dict[str, Any]] = []
        self.task_ids: List[str] = []

    def add(
        self,
        fn: Callable[..., Any],
        *args: Any,
        task_id: Optional[str] = None,
        **kwargs: Any,
    ) -> str:
        """
        Add a task to the batch.

        Args:
            fn: Callable to run
            *args: Positional arguments for fn
            task_id: Optional identifier for the task
            **kwargs: Keyword arguments for fn

        Returns:
            Task ID for looking up the result

        Raises:
            ValueError: If the batch is full or the id is already used
        """
        if self.is_full():
            raise ValueError(f"Batch is full (max size: {self.max_batch_size})")

        if task_id is None:
            task_id = f"task_{len(self.tasks)}"
        if task_id in self.task_ids:
            raise ValueError(f"Duplicate task id: {task_id}")

        self.tasks.append({"id": task_id, "fn": fn, "args": args, "kwargs": kwargs})
        self.task_ids.append(task_id)
        return task_id

    def clear(self) -> None:
        """Clear all tasks in the batch."""
        self.tasks = []
        self.task_ids = []

    def is_empty(self) -> bool:
        """Check if the batch has no tasks."""
        return len(self.tasks) == 0

    def is_full(self) -> bool:
        """Check if the batch has reached max_batch_size."""
        return self.max_batch_size is not None and len(self.tasks) >= self.max_batch_size

    def run(self, threads: int = 1) -> "BatchResult":
        """
        Run every task and collect results and errors.

        Args:
            threads: Number of worker threads (1 runs inline)

        Returns:
            Batch result

        Raises:
            ValueError: If the batch is empty
        """
        if self.is_empty():
            raise ValueError("Batch is empty")

        def _call(task: Dict[str, Any]) -> Any:
            try:
                return task["fn"](*task["args"], **task["kwargs"])
            except Exception as e:  # collected per task, reported by BatchResult
                logger.debug(f"Task {task['id']} failed: {e}")
                return _Failure(e)

        if threads <= 1 or len(self.tasks) == 1:
            outcomes = [_call(task) for task in self.tasks]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(_call, self.tasks))

        return BatchResult(dict(zip(self.task_ids, outcomes)), list(self.task_ids))


class _Failure:
    def __init__(self, error: Exception):
        self.error = error


class BatchResult:
    """
    Holds the outcome of a task batch.

    Provides access to individual task results and errors.
    """

    def __init__(self, outcomes: Dict[str, Any], task_ids: List[str]):
        """
        Initialize a batch result.

        Args:
            outcomes: Mapping of task id to result or failure marker
            task_ids: Task ids in insertion order
        """
        self.task_ids = task_ids
        self.results: Dict[str, Any] = {}
        self.errors: Dict[str, Exception] = {}
        for task_id in task_ids:
            outcome = outcomes[task_id]
            if isinstance(outcome, _Failure):
                self.errors[task_id] = outcome.error
            else:
                self.results[task_id] = outcome

    def get_result(self, task_id: str) -> Any:
        """
        Get the result of a task.

        Args:
            task_id: The ID of the task

        Returns:
            The task's return value

        Raises:
            Exception: The task's own error if it failed
        """
        if task_id in self.errors:
            raise self.errors[task_id]
        return self.results[task_id]

    def get_error(self, task_id: str) -> Optional[Exception]:
        """Get the error raised by a task, or None if it succeeded."""
        return self.errors.get(task_id)

    def is_successful(self, task_id: str) -> bool:
        """Check if a specific task succeeded."""
        return task_id in self.results

    def all_successful(self) -> bool:
        """Check if every task succeeded."""
        return not self.errors

    def ordered_results(self) -> List[Any]:
        """
        Get all results in insertion order.

        Returns:
            List of results

        Raises:
            Exception: The first failing task's own error when exactly one task failed
            BatchError: When several tasks failed
        """
        if self.errors:
            if len(self.errors) == 1:
                raise next(iter(self.errors.values()))
            failed = ", ".join(self.errors)
            raise BatchError(
                f"{len(self.errors)} tasks failed: {failed}",
                batch_results={**self.results, **self.errors},
            )
        return [self.results[task_id] for task_id in self.task_ids]
