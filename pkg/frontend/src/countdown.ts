// Exam timer. The server reports how many seconds remain (it knows when the
// session started); the client only ticks that number down locally.

export interface Countdown {
  stop(): void;
}

function format(totalSeconds: number): string {
  const clamped = Math.max(0, Math.floor(totalSeconds));
  const minutes = Math.floor(clamped / 60);
  const seconds = clamped % 60;
  return `${minutes}:${String(seconds).padStart(2, '0')}`;
}

export function startCountdown(
  display: HTMLElement,
  remainingSeconds: number,
  onExpire: () => void,
): Countdown {
  const deadline = Date.now() + remainingSeconds * 1000;
  let expired = false;

  const tick = () => {
    const left = (deadline - Date.now()) / 1000;
    display.textContent = format(left);
    display.classList.toggle('countdown-low', left < 300);
    if (left <= 0 && !expired) {
      expired = true;
      clearInterval(timer);
      onExpire();
    }
  };

  const timer = setInterval(tick, 1000);
  tick();
  return {
    stop() {
      clearInterval(timer);
    },
  };
}
